#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pgecap/eot.hpp"

namespace pgecap {

inline constexpr int kPersonClass = 0;

struct Detection {
  Box box;
  int label = kPersonClass;
  double score = 0.0;
};

using DetectionSet = std::vector<Detection>;

/// Detector output with scores still attached to the tape.
struct ScoredRegion {
  Box box;
  int label = kPersonClass;
  ad::Var score;
};

/// Object detector seam. `proposals` are candidate person regions; detectors
/// that localise on their own may ignore them.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual DetectionSet detect(const Tensor& image, std::span<const Box> proposals) const = 0;
  virtual int person_class() const { return kPersonClass; }
  virtual std::string name() const = 0;
};

/// White-box detector whose scores are differentiable in the image pixels.
class DifferentiableDetector : public Detector {
 public:
  virtual std::vector<ScoredRegion> score(ad::Var image, std::span<const Box> proposals) const = 0;

  DetectionSet detect(const Tensor& image, std::span<const Box> proposals) const override {
    ad::Tape tape;
    DetectionSet out;
    for (const auto& r : score(tape.constant(image), proposals)) {
      out.push_back({r.box, r.label, r.score.item()});
    }
    return out;
  }
};

namespace detail {

/// Integer pixel rectangle [x0, x1) x [y0, y1) covered by a box, clipped to the image.
struct PixelRect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x0 >= x1 || y0 >= y1; }
};

inline PixelRect pixel_rect(double bx0, double by0, double bx1, double by1, std::size_t w,
                            std::size_t h) {
  auto lo = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v - 0.5), 0.0, static_cast<double>(n)));
  };
  return {lo(bx0, w), lo(by0, h), lo(bx1, w), lo(by1, h)};
}

inline ad::SparseMap crop_map(const Shape& image_shape, const PixelRect& r) {
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2];
  const std::size_t rh = r.y1 - r.y0, rw = r.x1 - r.x0;
  ad::SparseMap m;
  m.in_size = c * h * w;
  m.out_shape = {c, rh, rw};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < rh; ++y)
      for (std::size_t x = 0; x < rw; ++x)
        m.entries.push_back({(ch * rh + y) * rw + x, (ch * h + r.y0 + y) * w + r.x0 + x, 1.0});
  return m;
}

inline void check_image(const Shape& s) {
  if (s.size() != 3 || s[0] != 3) throw ShapeError("detector expects (3, H, W) images, got " + to_string(s));
}

}  // namespace detail

/// Toy detector with a known optimum. For each proposal it inspects the
/// torso window (a centred square of side window_fraction * box height) and
/// scores 1 - mean squared distance of the window pixels to `target`.
class AnalyticColorDetector final : public DifferentiableDetector {
 public:
  explicit AnalyticColorDetector(std::array<double, 3> target = {0.0, 0.0, 0.0},
                                 double window_fraction = 0.32)
      : target_(target), window_fraction_(window_fraction) {
    for (double v : target_) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("target colour must lie in [0, 1]");
    }
    if (!(window_fraction_ > 0.0 && window_fraction_ <= 1.0)) {
      throw ConfigError("window fraction must lie in (0, 1]");
    }
  }

  std::string name() const override { return "analytic"; }
  const std::array<double, 3>& target() const { return target_; }

  detail::PixelRect window(const Box& b, std::size_t w, std::size_t h) const {
    const double side = window_fraction_ * b.height();
    const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
    return detail::pixel_rect(cx - 0.5 * side, cy - 0.5 * side, cx + 0.5 * side, cy + 0.5 * side, w, h);
  }

  std::vector<ScoredRegion> score(ad::Var image, std::span<const Box> proposals) const override {
    detail::check_image(image.shape());
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    std::vector<ScoredRegion> out;
    for (const Box& b : proposals) {
      if (!b.valid()) throw DataError("degenerate proposal box");
      const auto r = window(b, w, h);
      if (r.empty()) continue;
      const auto map = detail::crop_map(image.shape(), r);
      Tensor offset(map.out_shape);
      const std::size_t per = offset.size() / 3;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < per; ++i) offset[ch * per + i] = -target_[ch];
      auto diff = ad::sparse_linear(image, map, offset);
      auto s = ad::add_scalar(ad::scale(ad::mean(ad::square(diff)), -1.0), 1.0);
      out.push_back({b, kPersonClass, s});
    }
    return out;
  }

 private:
  std::array<double, 3> target_;
  double window_fraction_;
};

/// Fixed-seed convolutional scorer: 3x3 conv (3 -> 4) + tanh over the box
/// crop, global average pooling, linear readout and sigmoid.
class ConvScorerDetector final : public DifferentiableDetector {
 public:
  explicit ConvScorerDetector(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0xc0de}));
    conv_w_ = rng.normal_tensor({kFeatures, 3, 3, 3}, 1.0 / std::sqrt(27.0));
    conv_b_ = rng.normal_tensor({kFeatures}, 0.1);
    readout_ = rng.normal_tensor({kFeatures, 1}, 2.0);
    bias_ = 1.0;
  }

  std::string name() const override { return "conv"; }

  std::vector<ScoredRegion> score(ad::Var image, std::span<const Box> proposals) const override {
    detail::check_image(image.shape());
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    ad::Tape& tape = image.tape();
    std::vector<ScoredRegion> out;
    for (const Box& b : proposals) {
      if (!b.valid()) throw DataError("degenerate proposal box");
      const auto r = detail::pixel_rect(b.x1, b.y1, b.x2, b.y2, w, h);
      if (r.empty()) continue;
      const auto map = detail::crop_map(image.shape(), r);
      auto crop = ad::sparse_linear(image, map, Tensor(map.out_shape));
      auto feat = ad::tanh(ad::conv2d(crop, conv_w_, conv_b_, 1));
      const std::size_t n = feat.size() / kFeatures;
      auto pooled = ad::matmul(ad::reshape(feat, {kFeatures, n}),
                               tape.constant(Tensor({n, 1}, 1.0 / static_cast<double>(n))));
      auto logit = ad::matmul(ad::transpose(pooled), tape.constant(readout_));
      out.push_back({b, kPersonClass, ad::sigmoid(ad::add_scalar(ad::reshape(logit, {1}), bias_))});
    }
    return out;
  }

 private:
  static constexpr std::size_t kFeatures = 4;
  Tensor conv_w_, conv_b_, readout_;
  double bias_ = 0.0;
};

/// Parses "class score x1 y1 x2 y2" lines (commas or whitespace). Blank lines
/// and lines starting with '#' are skipped.
inline DetectionSet parse_detections(std::istream& in, const std::string& source) {
  DetectionSet out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    for (char& ch : line) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first) || first[0] == '#') continue;
    Detection d;
    std::istringstream fs(first);
    if (!(fs >> d.label) || !(ls >> d.score >> d.box.x1 >> d.box.y1 >> d.box.x2 >> d.box.y2)) {
      throw DataError(source + ":" + std::to_string(lineno) + ": malformed detection '" + line + "'");
    }
    std::string extra;
    if (ls >> extra) throw DataError(source + ":" + std::to_string(lineno) + ": trailing fields");
    if (!d.box.valid() || !(d.score >= 0.0 && d.score <= 1.0)) {
      throw DataError(source + ":" + std::to_string(lineno) + ": invalid box or score");
    }
    out.push_back(d);
  }
  return out;
}

/// External detector reached through a subprocess: the image is written to a
/// binary PPM, `command <path>` is run, and stdout is parsed as detection lines.
/// Not differentiable; evaluation only.
class SubprocessDetector final : public Detector {
 public:
  using ImageWriter = void (*)(const std::filesystem::path&, const Tensor&);

  SubprocessDetector(std::string command, ImageWriter writer, std::filesystem::path scratch_dir)
      : command_(std::move(command)), writer_(writer), scratch_(std::move(scratch_dir)) {}

  std::string name() const override { return "subprocess"; }

  DetectionSet detect(const Tensor& image, std::span<const Box>) const override {
    std::filesystem::create_directories(scratch_);
    const auto path = scratch_ / ("frame_" + std::to_string(counter_++) + ".ppm");
    writer_(path, image);
    const std::string cmd = command_ + " '" + path.string() + "'";
    std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
    if (!pipe) throw DataError("cannot start detector command: " + command_);
    std::string output;
    std::array<char, 4096> buf{};
    for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), pipe.get())) > 0;) {
      output.append(buf.data(), n);
    }
    const int status = pclose(pipe.release());
    std::filesystem::remove(path);
    if (status != 0) throw DataError("detector command failed: " + cmd);
    std::istringstream is(output);
    return parse_detections(is, command_);
  }

 private:
  std::string command_;
  ImageWriter writer_;
  std::filesystem::path scratch_;
  mutable std::size_t counter_ = 0;
};

/// Per image, the highest person score (0 without detections); mean over images.
inline double attack_loss(std::span<const DetectionSet> detections, int person_class) {
  if (detections.empty()) return 0.0;
  double total = 0.0;
  for (const auto& set : detections) {
    double best = 0.0;
    for (const auto& d : set) {
      if (d.label == person_class) best = std::max(best, d.score);
    }
    total += best;
  }
  return total / static_cast<double>(detections.size());
}

/// Differentiable counterpart. Requires at least one image; `tape` supplies
/// constants for images without person detections.
inline ad::Var attack_loss(ad::Tape& tape, std::span<const std::vector<ScoredRegion>> detections,
                           int person_class) {
  if (detections.empty()) return tape.constant(Tensor({1}, 0.0));
  std::vector<ad::Var> per_image;
  for (const auto& set : detections) {
    std::vector<ad::Var> scores;
    for (const auto& r : set) {
      if (r.label == person_class) scores.push_back(r.score);
    }
    per_image.push_back(scores.empty() ? tape.constant(Tensor({1}, 0.0)) : ad::maximum(scores));
  }
  return ad::mean_of(per_image);
}

}  // namespace pgecap
