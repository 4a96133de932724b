#pragma once

// Expectation-over-transformation: random photometric/geometric transforms of
// the patch and differentiable placement onto person boxes.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pgecap/ops.hpp"
#include "pgecap/random.hpp"

namespace pgecap {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct EOTConfig {
  Range contrast{0.8, 1.2};
  Range brightness{-0.1, 0.1};
  Range noise{-0.1, 0.1};
  Range rotation_deg{-20.0, 20.0};
  Range location{-0.1, 0.1};  // translation as a fraction of the patch side
  int samples_per_image = 1;

  void validate() const {
    auto check = [](const Range& r, const char* name) {
      if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
        throw ConfigError(std::string("EOT range '") + name + "' is not well ordered");
      }
    };
    check(contrast, "contrast");
    check(brightness, "brightness");
    check(noise, "noise");
    check(rotation_deg, "rotation");
    check(location, "location");
    if (contrast.lo < 0.0) throw ConfigError("EOT contrast must be non-negative");
    if (samples_per_image < 1) throw ConfigError("EOT samples_per_image must be >= 1");
  }

  /// All ranges collapsed to the identity transform.
  static EOTConfig identity() {
    return EOTConfig{{1.0, 1.0}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, 1};
  }
};

/// One concrete draw from the transform distribution.
struct TransformParams {
  double contrast = 1.0;
  double brightness = 0.0;
  Tensor noise;  // per-pixel additive field, same shape as the patch
  double rotation_deg = 0.0;
  double dx = 0.0;
  double dy = 0.0;
};

/// Uniform draws within each range; the noise field is per-pixel uniform.
inline TransformParams sample_transform(Rng& rng, const EOTConfig& config, const Shape& patch_shape) {
  config.validate();
  TransformParams p;
  p.contrast = rng.uniform(config.contrast.lo, config.contrast.hi);
  p.brightness = rng.uniform(config.brightness.lo, config.brightness.hi);
  p.rotation_deg = rng.uniform(config.rotation_deg.lo, config.rotation_deg.hi);
  p.dx = rng.uniform(config.location.lo, config.location.hi);
  p.dy = rng.uniform(config.location.lo, config.location.hi);
  p.noise = Tensor(patch_shape);
  for (double& v : p.noise.data) v = rng.uniform(config.noise.lo, config.noise.hi);
  return p;
}

struct TransformedPatch {
  ad::Var pixels;  // (3, H, W), zero outside the rotated support
  Tensor mask;     // (H, W) coverage in [0, 1]
};

namespace detail {

struct BilinearTap {
  std::size_t index;
  double weight;
};

/// Bilinear taps at (sx, sy) on an (h, w) grid; out-of-range corners dropped.
inline void bilinear_taps(double sx, double sy, std::size_t h, std::size_t w,
                          std::vector<BilinearTap>& taps) {
  taps.clear();
  const double fx0 = std::floor(sx), fy0 = std::floor(sy);
  const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  const double fx = sx - fx0, fy = sy - fy0;
  const long xs[2] = {x0, x0 + 1};
  const long ys[2] = {y0, y0 + 1};
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  for (int j = 0; j < 2; ++j) {
    if (ys[j] < 0 || ys[j] >= static_cast<long>(h)) continue;
    for (int i = 0; i < 2; ++i) {
      if (xs[i] < 0 || xs[i] >= static_cast<long>(w)) continue;
      const double wt = wx[i] * wy[j];
      if (wt == 0.0) continue;
      taps.push_back({static_cast<std::size_t>(ys[j]) * w + static_cast<std::size_t>(xs[i]), wt});
    }
  }
}

}  // namespace detail

/// contrast (pivot 0.5) -> brightness -> noise -> rotation about the patch
/// centre (bilinear, zero padding) -> clamp to [0, 1].
inline TransformedPatch apply_transform(ad::Var patch, const TransformParams& params) {
  const Shape& s = patch.shape();
  if (s.size() != 3) throw ShapeError("patch must be (C, H, W), got " + to_string(s));
  const std::size_t c = s[0], h = s[1], w = s[2];

  auto x = ad::add_scalar(ad::scale(ad::add_scalar(patch, -0.5), params.contrast), 0.5);
  if (params.brightness != 0.0) x = ad::add_scalar(x, params.brightness);
  if (!params.noise.data.empty()) x = ad::add_constant(x, params.noise);

  Tensor mask({h, w}, 1.0);
  if (params.rotation_deg != 0.0) {
    const double th = params.rotation_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    ad::SparseMap map;
    map.in_size = c * h * w;
    map.out_shape = s;
    std::vector<detail::BilinearTap> taps;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        // Inverse rotation: output pixel pulls from the source position.
        const double ox = static_cast<double>(xx) - cx, oy = static_cast<double>(y) - cy;
        const double sx = cx + ct * ox + st * oy;
        const double sy = cy - st * ox + ct * oy;
        detail::bilinear_taps(sx, sy, h, w, taps);
        double cover = 0.0;
        for (const auto& t : taps) {
          cover += t.weight;
          for (std::size_t ch = 0; ch < c; ++ch) {
            map.entries.push_back({ch * h * w + y * w + xx, ch * h * w + t.index, t.weight});
          }
        }
        mask[y * w + xx] = cover;
      }
    }
    x = ad::sparse_linear(x, map, Tensor(s));
  }
  return {ad::clamp(x, 0.0, 1.0), std::move(mask)};
}

inline Tensor apply_transform(const Tensor& patch, const TransformParams& params) {
  ad::Tape tape;
  return apply_transform(tape.constant(patch), params).pixels.value();
}

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 < x2 && y1 < y2;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Square patch footprint: side = scale * box height, centred on the box and
/// shifted by (dx, dy) patch sides.
struct PlacementRegion {
  double x0 = 0, y0 = 0, side = 0;
  bool clipped = false;  // part of the square lies outside the image
};

inline PlacementRegion placement_region(const Box& bbox, double scale, double dx, double dy,
                                        std::size_t image_w, std::size_t image_h) {
  if (!bbox.valid()) throw DataError("degenerate person box");
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("patch scale must lie in (0, 1]");
  PlacementRegion r;
  r.side = scale * bbox.height();
  const double cx = 0.5 * (bbox.x1 + bbox.x2) + dx * r.side;
  const double cy = 0.5 * (bbox.y1 + bbox.y2) + dy * r.side;
  r.x0 = cx - 0.5 * r.side;
  r.y0 = cy - 0.5 * r.side;
  r.clipped = r.x0 < 0.0 || r.y0 < 0.0 || r.x0 + r.side > static_cast<double>(image_w) ||
              r.y0 + r.side > static_cast<double>(image_h);
  return r;
}

struct PlacedImage {
  ad::Var image;
  PlacementRegion region;
};

/// Composites the transformed patch into the placement region. Pixels whose
/// centres fall inside the region blend (1 - coverage) * image + patch; all
/// other pixels pass through untouched.
inline PlacedImage place_patch(ad::Var image, const TransformedPatch& patch, const Box& bbox,
                               double scale, double dx, double dy) {
  const Shape& is = image.shape();
  const Shape& ps = patch.pixels.shape();
  if (is.size() != 3 || ps.size() != 3 || is[0] != ps[0]) {
    throw ShapeError("place_patch: image " + to_string(is) + " vs patch " + to_string(ps));
  }
  const std::size_t c = is[0], ih = is[1], iw = is[2];
  const std::size_t ph = ps[1], pw = ps[2];
  const PlacementRegion region = placement_region(bbox, scale, dx, dy, iw, ih);

  Tensor keep(is, 1.0);
  ad::SparseMap map;
  map.in_size = c * ph * pw;
  map.out_shape = is;
  std::vector<detail::BilinearTap> taps;

  const auto first = [](double lo) { return static_cast<long>(std::ceil(lo - 0.5)); };
  const long px_lo = std::max(0L, first(region.x0));
  const long py_lo = std::max(0L, first(region.y0));
  const long px_hi = std::min(static_cast<long>(iw), first(region.x0 + region.side));
  const long py_hi = std::min(static_cast<long>(ih), first(region.y0 + region.side));
  for (long py = py_lo; py < py_hi; ++py) {
    for (long px = px_lo; px < px_hi; ++px) {
      const double u = (static_cast<double>(px) + 0.5 - region.x0) / region.side * pw - 0.5;
      const double v = (static_cast<double>(py) + 0.5 - region.y0) / region.side * ph - 0.5;
      detail::bilinear_taps(std::clamp(u, 0.0, pw - 1.0), std::clamp(v, 0.0, ph - 1.0), ph, pw, taps);
      double cover = 0.0;
      for (const auto& t : taps) cover += t.weight * patch.mask[t.index];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t o = (ch * ih + static_cast<std::size_t>(py)) * iw + static_cast<std::size_t>(px);
        keep[o] = 1.0 - cover;
        for (const auto& t : taps) map.entries.push_back({o, ch * ph * pw + t.index, t.weight});
      }
    }
  }
  auto pasted = ad::sparse_linear(patch.pixels, map, Tensor(is));
  return {ad::add(ad::mul_constant(image, keep), pasted), region};
}

}  // namespace pgecap
