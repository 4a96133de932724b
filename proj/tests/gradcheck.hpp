#pragma once

// Central finite-difference checks against tape gradients.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pgecap/autodiff.hpp"
#include "pgecap/random.hpp"

namespace pgecap::testing {

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;
  std::string first_failure;

  bool ok() const { return checked > 0 && failures == 0; }
};

/// `f(tape, x)` builds a scalar loss from the variable x. Coordinates are
/// drawn at random when `coords` is smaller than x.size(), otherwise all
/// are checked. A coordinate passes when
///   |analytic - numeric| <= rtol * max(|analytic|, |numeric|) + atol.
template <class F>
GradCheck check_gradient(const Tensor& x0, F&& f, std::size_t coords, std::uint64_t seed, double rtol = 1e-2,
                         double h = 1e-5, double atol = 1e-9) {
  ad::Tape tape;
  auto x = tape.variable(x0);
  auto y = f(tape, x);
  tape.backward(y);
  const Tensor g = tape.gradient(x);

  std::vector<std::size_t> idx(x0.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (coords < idx.size()) {
    Rng rng(seed);
    for (std::size_t i = 0; i < coords; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.next() % (idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(coords);
  }

  auto eval = [&f](const Tensor& at) {
    ad::Tape t;
    return f(t, t.constant(at)).item();
  };
  GradCheck r;
  for (std::size_t i : idx) {
    Tensor xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    const double numeric = (eval(xp) - eval(xm)) / (2.0 * h);
    const double analytic = g[i];
    const double err = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    ++r.checked;
    if (scale > 0.0) r.worst_rel = std::max(r.worst_rel, err / scale);
    if (err > rtol * scale + atol) {
      if (r.failures++ == 0) {
        r.first_failure = "coord " + std::to_string(i) + ": analytic " + std::to_string(analytic) + " numeric " +
                          std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace pgecap::testing
