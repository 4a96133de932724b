#pragma once

// Differentiable array operations recorded on an ad::Tape.
//
// Network weights are passed as plain Tensors: the denoiser, decoder and
// detectors are frozen, so only activations carry gradients.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include "pgecap/autodiff.hpp"

namespace pgecap::ad {

namespace detail {

inline bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (v.requires_grad()) return true;
  }
  return false;
}

inline Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands on different tapes");
  return a.tape();
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t.record(std::move(out), detail::any_grad({a, b}),
                  [a, b](const std::vector<double>& g) {
                    a.tape().accumulate(a, g);
                    b.tape().accumulate(b, g);
                  });
}

/// alpha * a + beta * b
inline Var axpby(double alpha, Var a, double beta, Var b) {
  Tape& t = detail::same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "axpby");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = alpha * a.value()[i] + beta * b.value()[i];
  }
  return t.record(std::move(out), detail::any_grad({a, b}),
                  [a, b, alpha, beta](const std::vector<double>& g) {
                    std::vector<double> ga(g.size()), gb(g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      ga[i] = alpha * g[i];
                      gb[i] = beta * g[i];
                    }
                    a.tape().accumulate(a, ga);
                    b.tape().accumulate(b, gb);
                  });
}

inline Var sub(Var a, Var b) { return axpby(1.0, a, -1.0, b); }

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return t.record(std::move(out), detail::any_grad({a, b}),
                  [a, b](const std::vector<double>& g) {
                    std::vector<double> ga(g.size()), gb(g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      ga[i] = g[i] * b.value()[i];
                      gb[i] = g[i] * a.value()[i];
                    }
                    a.tape().accumulate(a, ga);
                    b.tape().accumulate(b, gb);
                  });
}

inline Var scale(Var a, double k) {
  Tensor out = a.value();
  for (double& v : out.data) v *= k;
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a, k](const std::vector<double>& g) {
                           std::vector<double> ga(g);
                           for (double& v : ga) v *= k;
                           a.tape().accumulate(a, ga);
                         });
}

inline Var add_scalar(Var a, double k) {
  Tensor out = a.value();
  for (double& v : out.data) v += k;
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a](const std::vector<double>& g) { a.tape().accumulate(a, g); });
}

inline Var add_constant(Var a, const Tensor& c) {
  require_same_shape(a.shape(), c.shape, "add_constant");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a](const std::vector<double>& g) { a.tape().accumulate(a, g); });
}

inline Var mul_constant(Var a, const Tensor& c) {
  require_same_shape(a.shape(), c.shape, "mul_constant");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a, c](const std::vector<double>& g) {
                           std::vector<double> ga(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c[i];
                           a.tape().accumulate(a, ga);
                         });
}

inline Var reshape(Var a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  Tensor out(std::move(shape), a.value().data);
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a](const std::vector<double>& g) { a.tape().accumulate(a, g); });
}

/// Elementwise y = f(x) with derivative df(x, y).
template <class F, class DF>
Var map(Var a, F f, DF df) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i]);
  const std::size_t out_id = a.tape().size();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a, df, out_id](const std::vector<double>& g) {
                           const Tensor& y = a.tape().value(out_id);
                           std::vector<double> ga(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] = g[i] * df(a.value()[i], y[i]);
                           }
                           a.tape().accumulate(a, ga);
                         });
}

inline Var exp(Var a) {
  return map(a, [](double x) { return std::exp(x); },
             [](double, double y) { return y; });
}

inline Var tanh(Var a) {
  return map(a, [](double x) { return std::tanh(x); },
             [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return map(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
             [](double, double y) { return y * (1.0 - y); });
}

inline Var square(Var a) {
  return map(a, [](double x) { return x * x; },
             [](double x, double) { return 2.0 * x; });
}

inline Var clamp(Var a, double lo, double hi) {
  return map(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
             [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape().record(Tensor({1}, s), a.requires_grad(),
                         [a](const std::vector<double>& g) {
                           std::vector<double> ga(a.size(), g[0]);
                           a.tape().accumulate(a, ga);
                         });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape().record(Tensor({1}, s / n), a.requires_grad(),
                         [a, n](const std::vector<double>& g) {
                           std::vector<double> ga(a.size(), g[0] / n);
                           a.tape().accumulate(a, ga);
                         });
}

/// (m, k) x (k, n) -> (m, n)
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul " + to_string(sa) + " x " + to_string(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out({m, n});
  const auto& A = a.value().data;
  const auto& B = b.value().data;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B[p * n + j];
    }
  }
  return t.record(std::move(out), detail::any_grad({a, b}),
                  [a, b, m, k, n](const std::vector<double>& g) {
                    const auto& A = a.value().data;
                    const auto& B = b.value().data;
                    if (a.requires_grad()) {
                      std::vector<double> ga(m * k, 0.0);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                          ga[i * k + p] = s;
                        }
                      a.tape().accumulate(a, ga);
                    }
                    if (b.requires_grad()) {
                      std::vector<double> gb(k * n, 0.0);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = A[i * k + p];
                          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                        }
                      b.tape().accumulate(b, gb);
                    }
                  });
}

inline Var transpose(Var a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw ShapeError("transpose expects rank 2, got " + to_string(s));
  const std::size_t m = s[0], n = s[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a, m, n](const std::vector<double>& g) {
                           std::vector<double> ga(m * n);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j * m + i];
                           a.tape().accumulate(a, ga);
                         });
}

/// Row-wise softmax of an (m, n) array.
inline Var softmax_rows(Var a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw ShapeError("softmax_rows expects rank 2, got " + to_string(s));
  const std::size_t m = s[0], n = s[1];
  Tensor out(s);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = &a.value().data[i * n];
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  const std::size_t out_id = a.tape().size();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a, m, n, out_id](const std::vector<double>& g) {
                           const Tensor& y = a.tape().value(out_id);
                           std::vector<double> ga(m * n);
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
                           }
                           a.tape().accumulate(a, ga);
                         });
}

/// Adds bias[c] to every element of channel c of a (C, ...) array.
inline Var add_channel_bias(Var a, const Tensor& bias) {
  const std::size_t c = a.shape().at(0);
  if (bias.size() != c) throw ShapeError("add_channel_bias: bias size mismatch");
  const std::size_t per = a.size() / c;
  Tensor out = a.value();
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] += bias[i];
  return a.tape().record(std::move(out), a.requires_grad(),
                         [a](const std::vector<double>& g) { a.tape().accumulate(a, g); });
}

/// Stride-1 2-D convolution. x: (Cin, H, W), w: (Cout, Cin, k, k), b: (Cout).
inline Var conv2d(Var x, const Tensor& w, const Tensor& b, std::size_t pad) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || w.rank() != 4 || w.shape[1] != xs[0] || w.shape[2] != w.shape[3]) {
    throw ShapeError("conv2d input " + to_string(xs) + " weight " + to_string(w.shape));
  }
  const std::size_t cin = xs[0], h = xs[1], wd = xs[2];
  const std::size_t cout = w.shape[0], k = w.shape[2];
  if (h + 2 * pad < k || wd + 2 * pad < k) throw ShapeError("conv2d kernel larger than input");
  const std::size_t oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
  Tensor out({cout, oh, ow});
  const Tensor& X = x.value();
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = b.size() ? b[co] : 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              s += w.data[((co * cin + ci) * k + ky) * k + kx] * X.at(ci, iy, ix);
            }
          }
        out.at(co, oy, ox) = s;
      }
  }
  return x.tape().record(
      std::move(out), x.requires_grad(),
      [x, w, cin, h, wd, cout, k, pad, oh, ow](const std::vector<double>& g) {
        std::vector<double> gx(cin * h * wd, 0.0);
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const double go = g[(co * oh + oy) * ow + ox];
              if (go == 0.0) continue;
              for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                    gx[(ci * h + iy) * wd + ix] += go * w.data[((co * cin + ci) * k + ky) * k + kx];
                  }
                }
            }
        x.tape().accumulate(x, gx);
      });
}

/// Transposed convolution. x: (Cin, H, W), w: (Cin, Cout, k, k), b: (Cout).
/// Output side: (H - 1) * stride - 2 * pad + k.
inline Var conv_transpose2d(Var x, const Tensor& w, const Tensor& b, std::size_t stride,
                            std::size_t pad) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || w.rank() != 4 || w.shape[0] != xs[0] || w.shape[2] != w.shape[3]) {
    throw ShapeError("conv_transpose2d input " + to_string(xs) + " weight " +
                     to_string(w.shape));
  }
  const std::size_t cin = xs[0], h = xs[1], wd = xs[2];
  const std::size_t cout = w.shape[1], k = w.shape[2];
  const std::size_t oh = (h - 1) * stride + k - 2 * pad;
  const std::size_t ow = (wd - 1) * stride + k - 2 * pad;
  Tensor out({cout, oh, ow});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t i = 0; i < oh * ow; ++i) out[co * oh * ow + i] = b.size() ? b[co] : 0.0;
  const Tensor& X = x.value();
  // Visits every (input pixel, kernel tap) pair landing inside the output.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < wd; ++ix)
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long oy = static_cast<long>(iy * stride + ky) - static_cast<long>(pad);
            if (oy < 0 || oy >= static_cast<long>(oh)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long ox = static_cast<long>(ix * stride + kx) - static_cast<long>(pad);
              if (ox < 0 || ox >= static_cast<long>(ow)) continue;
              for (std::size_t co = 0; co < cout; ++co) {
                fn((ci * h + iy) * wd + ix, (co * oh + oy) * ow + ox,
                   w.data[((ci * cout + co) * k + ky) * k + kx]);
              }
            }
          }
  };
  for_each_tap([&](std::size_t in, std::size_t o, double wt) { out[o] += wt * X[in]; });
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, for_each_tap](const std::vector<double>& g) {
                           std::vector<double> gx(x.size(), 0.0);
                           for_each_tap([&](std::size_t in, std::size_t o, double wt) {
                             gx[in] += wt * g[o];
                           });
                           x.tape().accumulate(x, gx);
                         });
}

/// Fixed sparse linear map: out[o] = offset[o] + sum w * in[i].
struct SparseMap {
  struct Entry {
    std::size_t out;
    std::size_t in;
    double weight;
  };
  std::size_t in_size = 0;
  Shape out_shape;
  std::vector<Entry> entries;
};

inline Var sparse_linear(Var x, const SparseMap& map, const Tensor& offset) {
  if (x.size() != map.in_size) throw ShapeError("sparse_linear: input size mismatch");
  require_same_shape(offset.shape, map.out_shape, "sparse_linear offset");
  Tensor out = offset;
  const Tensor& X = x.value();
  for (const auto& e : map.entries) out[e.out] += e.weight * X[e.in];
  return x.tape().record(std::move(out), x.requires_grad(),
                         [x, map](const std::vector<double>& g) {
                           std::vector<double> gx(x.size(), 0.0);
                           for (const auto& e : map.entries) gx[e.in] += e.weight * g[e.out];
                           x.tape().accumulate(x, gx);
                         });
}

/// Cosine similarity of two flattened arrays. Computed as dot / sqrt(|a|^2 |b|^2)
/// so that identical inputs give exactly 1 and an exactly zero gradient.
inline Var cosine_similarity(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  require_same_shape(a.shape(), b.shape(), "cosine_similarity");
  const auto& A = a.value().data;
  const auto& B = b.value().data;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    dot += A[i] * B[i];
    na += A[i] * A[i];
    nb += B[i] * B[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw NumericalError("cosine similarity of a zero-norm array");
  }
  const double denom = std::sqrt(na * nb);
  const double cos = dot / denom;
  return t.record(Tensor({1}, cos), detail::any_grad({a, b}),
                  [a, b, denom, cos, na, nb](const std::vector<double>& g) {
                    const auto& A = a.value().data;
                    const auto& B = b.value().data;
                    std::vector<double> ga(A.size()), gb(B.size());
                    for (std::size_t i = 0; i < A.size(); ++i) {
                      ga[i] = g[0] * (B[i] / denom - cos * A[i] / na);
                      gb[i] = g[0] * (A[i] / denom - cos * B[i] / nb);
                    }
                    a.tape().accumulate(a, ga);
                    b.tape().accumulate(b, gb);
                  });
}

/// Largest of a set of scalars; the gradient routes to the first maximiser.
inline Var maximum(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("maximum of an empty set");
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].item() > xs[best].item()) best = i;
  }
  Var winner = xs[best];
  return winner.tape().record(Tensor({1}, winner.item()), winner.requires_grad(),
                              [winner](const std::vector<double>& g) {
                                winner.tape().accumulate(winner, g);
                              });
}

/// sum_i w_i * x_i over scalar vars.
inline Var weighted_sum(std::span<const Var> xs, std::span<const double> weights) {
  if (xs.empty() || xs.size() != weights.size()) {
    throw std::invalid_argument("weighted_sum: bad operand count");
  }
  double s = 0.0;
  bool grad = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s += weights[i] * xs[i].item();
    grad = grad || xs[i].requires_grad();
  }
  std::vector<Var> vs(xs.begin(), xs.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return xs[0].tape().record(Tensor({1}, s), grad, [vs, ws](const std::vector<double>& g) {
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const double gi = ws[i] * g[0];
      vs[i].tape().accumulate(vs[i], std::span<const double>(&gi, 1));
    }
  });
}

/// Arithmetic mean of scalar vars (sum, then divide).
inline Var mean_of(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("mean_of an empty set");
  const double n = static_cast<double>(xs.size());
  double s = 0.0;
  bool grad = false;
  for (const Var& x : xs) {
    s += x.item();
    grad = grad || x.requires_grad();
  }
  std::vector<Var> vs(xs.begin(), xs.end());
  return xs[0].tape().record(Tensor({1}, s / n), grad, [vs, n](const std::vector<double>& g) {
    const double gi = g[0] / n;
    for (const Var& v : vs) v.tape().accumulate(v, std::span<const double>(&gi, 1));
  });
}

}  // namespace pgecap::ad
