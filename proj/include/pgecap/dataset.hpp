#pragma once

// Synthetic pedestrian scenes for desk-scale runs and tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "pgecap/io.hpp"
#include "pgecap/optimizer.hpp"

namespace pgecap {

struct ToyDatasetOptions {
  std::size_t images = 8;
  std::size_t width = 128;
  std::size_t height = 128;
  std::array<double, 3> person_color = {0.0, 0.0, 0.0};
  std::uint64_t seed = 7;
};

/// Leafy green backgrounds with one or two dark upright "pedestrians" whose
/// bounding boxes are the annotations.
inline AttackSet make_toy_scenes(const ToyDatasetOptions& opt) {
  AttackSet set;
  for (std::size_t n = 0; n < opt.images; ++n) {
    Rng rng(derive_seed(opt.seed, {0x70f, n}));
    Tensor img({3, opt.height, opt.width});
    const double fx = rng.uniform(0.05, 0.2), fy = rng.uniform(0.05, 0.2), ph = rng.uniform(0.0, 6.28);
    for (std::size_t y = 0; y < opt.height; ++y)
      for (std::size_t x = 0; x < opt.width; ++x) {
        const double t = 0.5 + 0.5 * std::sin(fx * x + ph) * std::cos(fy * y);
        const double jitter = rng.uniform(-0.03, 0.03);
        img.at(0, y, x) = 0.20 + 0.15 * t + jitter;
        img.at(1, y, x) = 0.45 + 0.30 * t + jitter;
        img.at(2, y, x) = 0.15 + 0.10 * t + jitter;
      }
    const std::size_t people = 1 + (rng.next() % 2);
    std::vector<Box> boxes;
    const double slot = static_cast<double>(opt.width) / static_cast<double>(people);
    for (std::size_t p = 0; p < people; ++p) {
      const double h = std::floor(rng.uniform(0.5, 0.75) * static_cast<double>(opt.height));
      const double w = std::floor(0.4 * h);
      const double cx = std::floor(slot * (static_cast<double>(p) + 0.5) + rng.uniform(-0.1, 0.1) * slot);
      const double x1 = std::clamp(cx - std::floor(w / 2), 0.0, static_cast<double>(opt.width) - w);
      const double y1 = std::floor(rng.uniform(0.05, 0.95) * (static_cast<double>(opt.height) - h));
      const Box b{x1, y1, x1 + w, y1 + h};
      for (auto y = static_cast<std::size_t>(b.y1); y < static_cast<std::size_t>(b.y2); ++y)
        for (auto x = static_cast<std::size_t>(b.x1); x < static_cast<std::size_t>(b.x2); ++x)
          for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = opt.person_color[c];
      boxes.push_back(b);
    }
    set.images.push_back(std::move(img));
    set.boxes.push_back(std::move(boxes));
  }
  return set;
}

/// Writes the scenes as PPM files plus `annotations.jsonl` under `dir`.
/// Coordinates are integral, so the 8-bit round trip preserves the person pixels.
inline fs::path write_toy_dataset(const fs::path& dir, const ToyDatasetOptions& opt) {
  fs::create_directories(dir);
  const AttackSet set = make_toy_scenes(opt);
  std::vector<AnnotationRecord> records;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string name = "scene_" + std::to_string(i) + ".ppm";
    write_ppm(dir / name, set.images[i]);
    records.push_back({name, set.boxes[i]});
  }
  const fs::path ann = dir / "annotations.jsonl";
  write_annotations(ann, records);
  return ann;
}

inline AttackSet to_attack_set(const Dataset& ds) {
  AttackSet set;
  set.images = ds.images;
  for (const auto& r : ds.records) set.boxes.push_back(r.boxes);
  return set;
}

}  // namespace pgecap
