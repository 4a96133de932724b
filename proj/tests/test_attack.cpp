#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/stat.h>

#include "gradcheck.hpp"
#include "pgecap/dataset.hpp"
#include "pgecap/detector.hpp"
#include "pgecap/io.hpp"

using namespace pgecap;
namespace fs = std::filesystem;

namespace {

TransformParams neutral(const Shape& s) {
  TransformParams p;
  p.noise = Tensor(s);
  return p;
}

Tensor uniform_image(std::size_t h, std::size_t w, double v) { return Tensor({3, h, w}, v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Attack loss of a fixed patch pasted on the scene's boxes under EOT draws.
ad::Var patched_loss(ad::Tape& tape, ad::Var patch, const AttackSet& data, const DifferentiableDetector& det,
                     const EOTConfig& eot, double scale, std::uint64_t seed) {
  std::vector<std::vector<ScoredRegion>> dets;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int s = 0; s < eot.samples_per_image; ++s) {
      Rng rng(derive_seed(seed, {i, static_cast<std::uint64_t>(s)}));
      const auto params = sample_transform(rng, eot, patch.shape());
      const auto tp = apply_transform(patch, params);
      auto img = tape.constant(data.images[i]);
      for (const Box& b : data.boxes[i]) img = place_patch(img, tp, b, scale, params.dx, params.dy).image;
      dets.push_back(det.score(img, data.boxes[i]));
    }
  }
  return attack_loss(tape, dets, det.person_class());
}

AttackSet small_scenes(std::size_t n) {
  ToyDatasetOptions o;
  o.images = n;
  return make_toy_scenes(o);
}

}  // namespace

TEST(Eot, DefaultsMatchTable) {
  const EOTConfig c;
  EXPECT_EQ(c.contrast, (Range{0.8, 1.2}));
  EXPECT_EQ(c.brightness, (Range{-0.1, 0.1}));
  EXPECT_EQ(c.noise, (Range{-0.1, 0.1}));
  EXPECT_EQ(c.rotation_deg, (Range{-20.0, 20.0}));
  EXPECT_EQ(c.location, (Range{-0.1, 0.1}));
}

TEST(Eot, DrawsStayInRanges) {
  const EOTConfig c;
  Rng rng(1);
  for (int k = 0; k < 10000; ++k) {
    const auto p = sample_transform(rng, c, {3, 2, 2});
    ASSERT_TRUE(c.contrast.contains(p.contrast));
    ASSERT_TRUE(c.brightness.contains(p.brightness));
    ASSERT_TRUE(c.rotation_deg.contains(p.rotation_deg));
    ASSERT_TRUE(c.location.contains(p.dx));
    ASSERT_TRUE(c.location.contains(p.dy));
    for (double v : p.noise.data) ASSERT_TRUE(c.noise.contains(v));
  }
}

TEST(Eot, SeedStreamIsReproducible) {
  Rng a(9), b(9);
  for (int k = 0; k < 50; ++k) {
    const auto p = sample_transform(a, EOTConfig{}, {3, 4, 4});
    const auto q = sample_transform(b, EOTConfig{}, {3, 4, 4});
    EXPECT_EQ(p.contrast, q.contrast);
    EXPECT_EQ(p.rotation_deg, q.rotation_deg);
    EXPECT_EQ(p.noise, q.noise);
  }
}

TEST(Eot, CollapsedRangesGiveFixedTransform) {
  Rng rng(3);
  const auto p = sample_transform(rng, EOTConfig::identity(), {3, 4, 4});
  EXPECT_EQ(p.contrast, 1.0);
  EXPECT_EQ(p.brightness, 0.0);
  EXPECT_EQ(p.rotation_deg, 0.0);
  EXPECT_EQ(p.dx, 0.0);
  for (double v : p.noise.data) EXPECT_EQ(v, 0.0);
  const Tensor patch = Rng(4).normal_tensor({3, 4, 4}, 0.1);
  Tensor in = patch;
  for (double& v : in.data) v = std::clamp(v + 0.5, 0.0, 1.0);
  EXPECT_EQ(apply_transform(in, p), in);
}

TEST(Eot, InvalidConfig) {
  EOTConfig c;
  c.contrast = {1.2, 0.8};
  EXPECT_THROW(c.validate(), ConfigError);
  c = EOTConfig{};
  c.samples_per_image = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ApplyTransform, ContrastPivotAndHandValue) {
  for (double c : {0.8, 0.93, 1.0, 1.2}) {
    auto p = neutral({3, 1, 1});
    p.contrast = c;
    const Tensor out = apply_transform(Tensor({3, 1, 1}, 0.5), p);
    for (double v : out.data) EXPECT_NEAR(v, 0.5, 1e-7);
  }
  auto p = neutral({3, 1, 1});
  p.contrast = 1.2;
  EXPECT_NEAR(apply_transform(Tensor({3, 1, 1}, 0.7), p)[0], 0.74, 1e-12);
}

TEST(ApplyTransform, BrightnessNoiseClamp) {
  auto p = neutral({3, 1, 2});
  p.brightness = 0.1;
  p.noise[1] = -0.05;
  const Tensor out = apply_transform(Tensor({3, 1, 2}, std::vector<double>{0.95, 0.3, 0.2, 0.2, 0.2, 0.2}), p);
  EXPECT_EQ(out[0], 1.0);
  EXPECT_NEAR(out[1], 0.35, 1e-12);
}

TEST(ApplyTransform, RotationKeepsCentreAndMasksCorners) {
  auto p = neutral({3, 9, 9});
  p.rotation_deg = 20.0;
  ad::Tape t;
  const auto tp = apply_transform(t.constant(Tensor({3, 9, 9}, 0.8)), p);
  EXPECT_NEAR(tp.pixels.value().at(0, 4, 4), 0.8, 1e-12);
  EXPECT_NEAR(tp.mask[4 * 9 + 4], 1.0, 1e-12);
  EXPECT_LT(tp.mask[0], 1.0);
  EXPECT_LT(tp.pixels.value().at(1, 0, 0), 0.8);
  for (double m : tp.mask.data) {
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0 + 1e-12);
  }
}

TEST(ApplyTransform, DifferentiableInPatchPixels) {
  Rng rng(5);
  auto p = sample_transform(rng, EOTConfig{}, {3, 6, 6});
  Tensor patch({3, 6, 6});
  for (double& v : patch.data) v = rng.uniform(0.25, 0.75);
  const Tensor w = Rng(6).normal_tensor({3, 6, 6});
  auto r = pgecap::testing::check_gradient(patch, [&](ad::Tape& t, ad::Var x) {
    return ad::sum(ad::mul(apply_transform(x, p).pixels, t.constant(w)));
  }, 40, 1);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(Placement, HandRegion) {
  const auto r = placement_region({100, 50, 200, 250}, 0.4, 0.0, 0.0, 640, 480);
  EXPECT_NEAR(r.side, 80.0, 1e-12);
  EXPECT_NEAR(r.x0, 110.0, 1e-12);
  EXPECT_NEAR(r.y0, 110.0, 1e-12);
  EXPECT_NEAR(r.x0 + r.side, 190.0, 1e-12);
  EXPECT_NEAR(r.y0 + r.side, 190.0, 1e-12);
  EXPECT_FALSE(r.clipped);
  const auto moved = placement_region({100, 50, 200, 250}, 0.4, 0.1, -0.1, 640, 480);
  EXPECT_NEAR(moved.x0, 118.0, 1e-12);
  EXPECT_NEAR(moved.y0, 102.0, 1e-12);
}

TEST(Placement, Errors) {
  EXPECT_THROW(placement_region({10, 10, 10, 20}, 0.4, 0, 0, 64, 64), DataError);
  EXPECT_THROW(placement_region({10, 10, 20, 20}, 0.0, 0, 0, 64, 64), ConfigError);
  EXPECT_THROW(placement_region({10, 10, 20, 20}, 1.5, 0, 0, 64, 64), ConfigError);
}

TEST(Placement, PastesInsideLeavesOutsideBitIdentical) {
  Rng rng(7);
  const Tensor image = rng.normal_tensor({3, 48, 64}, 0.2);
  ad::Tape t;
  const auto tp = apply_transform(t.constant(Tensor({3, 8, 8}, 0.9)), neutral({3, 8, 8}));
  const Box b{20, 4, 40, 44};
  const auto placed = place_patch(t.constant(image), tp, b, 0.5, 0.0, 0.0);
  const auto& r = placed.region;  // side 20, [20, 40) x [14, 34)
  const Tensor& out = placed.image.value();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const bool inside = x >= 20 && x < 40 && y >= 14 && y < 34;
        if (inside) {
          EXPECT_NEAR(out.at(c, y, x), 0.9, 1e-12);
        } else {
          EXPECT_EQ(out.at(c, y, x), image.at(c, y, x));
        }
      }
  EXPECT_FALSE(r.clipped);
}

TEST(Placement, TinyRegionLeavesImageUnchanged) {
  const Tensor image = Rng(8).normal_tensor({3, 200, 300});
  ad::Tape t;
  const auto tp = apply_transform(t.constant(Tensor({3, 4, 4}, 1.0)), neutral({3, 4, 4}));
  const auto placed = place_patch(t.constant(image), tp, {100, 50, 200, 150}, 1e-3, 0, 0);
  EXPECT_EQ(placed.image.value(), image);
}

TEST(Placement, ClipsAtImageBorder) {
  const Tensor image({3, 32, 32}, 0.1);
  ad::Tape t;
  const auto tp = apply_transform(t.constant(Tensor({3, 4, 4}, 1.0)), neutral({3, 4, 4}));
  const auto placed = place_patch(t.constant(image), tp, {0, 0, 8, 32}, 0.5, -0.1, 0.0);
  EXPECT_TRUE(placed.region.clipped);
  EXPECT_NEAR(placed.image.value().at(0, 16, 0), 1.0, 1e-12);
}

TEST(AnalyticDetector, OptimumAndDeterminism) {
  const AnalyticColorDetector det({0.2, 0.4, 0.6});
  Tensor img({3, 40, 40});
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 40; ++x) {
      img.at(0, y, x) = 0.2;
      img.at(1, y, x) = 0.4;
      img.at(2, y, x) = 0.6;
    }
  const std::vector<Box> boxes{{5, 5, 25, 35}};
  const auto a = det.detect(img, boxes);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].score, 1.0);
  EXPECT_EQ(a[0].label, kPersonClass);
  const Tensor noisy = Rng(2).normal_tensor({3, 40, 40}, 0.3);
  const auto b1 = det.detect(noisy, boxes), b2 = det.detect(noisy, boxes);
  EXPECT_EQ(b1[0].score, b2[0].score);
  EXPECT_LT(b1[0].score, 1.0);
}

TEST(AnalyticDetector, ScoreGradient) {
  const AnalyticColorDetector det;
  Tensor img({3, 30, 30});
  Rng rng(3);
  for (double& v : img.data) v = rng.uniform(0.0, 1.0);
  const std::vector<Box> boxes{{5, 2, 17, 28}};
  auto r = pgecap::testing::check_gradient(img, [&](ad::Tape&, ad::Var x) { return det.score(x, boxes)[0].score; },
                                           60, 4);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(ConvDetector, DeterministicBoundedDifferentiable) {
  const ConvScorerDetector det(17);
  Tensor img({3, 24, 24});
  Rng rng(4);
  for (double& v : img.data) v = rng.uniform(0.0, 1.0);
  const std::vector<Box> boxes{{2, 2, 12, 22}, {12, 4, 20, 20}};
  const auto a = det.detect(img, boxes), b = det.detect(img, boxes);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_GT(a[i].score, 0.0);
    EXPECT_LT(a[i].score, 1.0);
  }
  auto r = pgecap::testing::check_gradient(img, [&](ad::Tape&, ad::Var x) { return det.score(x, boxes)[1].score; },
                                           60, 5);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(AttackLoss, Aggregation) {
  EXPECT_EQ(attack_loss(std::vector<DetectionSet>{{}, {}}, kPersonClass), 0.0);
  const DetectionSet one{{{0, 0, 1, 1}, 0, 0.9}, {{0, 0, 1, 1}, 0, 0.2}};
  EXPECT_EQ(attack_loss(std::vector<DetectionSet>{one}, kPersonClass), 0.9);
  const DetectionSet other{{{0, 0, 1, 1}, 0, 0.5}, {{0, 0, 1, 1}, 3, 0.99}};
  EXPECT_NEAR(attack_loss(std::vector<DetectionSet>{one, other}, kPersonClass), 0.7, 1e-15);

  ad::Tape t;
  std::vector<std::vector<ScoredRegion>> dets(2);
  dets[0] = {{{0, 0, 1, 1}, 0, t.constant(Tensor({1}, 0.9))}, {{0, 0, 1, 1}, 0, t.constant(Tensor({1}, 0.2))}};
  dets[1] = {{{0, 0, 1, 1}, 0, t.constant(Tensor({1}, 0.5))}};
  EXPECT_NEAR(attack_loss(t, dets, kPersonClass).item(), 0.7, 1e-15);
}

TEST(AttackPipeline, EndToEndPatchGradient) {
  const auto data = small_scenes(2);
  const AnalyticColorDetector det;
  Tensor patch({3, 16, 16});
  Rng rng(11);
  for (double& v : patch.data) v = rng.uniform(0.3, 0.7);
  auto r = pgecap::testing::check_gradient(patch, [&](ad::Tape& t, ad::Var x) {
    return patched_loss(t, x, data, det, EOTConfig{}, 0.36, 5);
  }, 40, 2);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(AttackPipeline, PixelDescentDefeatsAnalyticDetector) {
  const auto data = small_scenes(4);
  const AnalyticColorDetector det;
  // Patch = sigmoid(theta) keeps pixels in (0, 1) without clamping the gradient.
  Tensor theta({3, 16, 16});
  auto loss_at = [&](const Tensor& th, Tensor* grad) {
    ad::Tape t;
    auto v = t.variable(th);
    auto l = patched_loss(t, ad::sigmoid(v), data, det, EOTConfig::identity(), 0.36, 1);
    if (grad) {
      t.backward(l);
      *grad = t.gradient(v);
    }
    return l.item();
  };
  const double initial = loss_at(theta, nullptr);
  double last = initial;
  for (int step = 0; step < 200 && last >= 0.1 * initial; ++step) {
    Tensor g;
    last = loss_at(theta, &g);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= 150.0 * g[i];
  }
  last = loss_at(theta, nullptr);
  EXPECT_LT(last, 0.1 * initial) << "initial " << initial;
}

TEST(AttackPipeline, MoreEotSamplesReduceEstimateVariance) {
  const auto data = small_scenes(1);
  const AnalyticColorDetector det;
  Tensor patch({3, 16, 16});
  Rng rng(12);
  for (double& v : patch.data) v = rng.uniform(0.0, 1.0);
  std::vector<double> variances;
  for (int samples : {1, 4, 16, 64}) {
    EOTConfig eot;
    eot.samples_per_image = samples;
    std::vector<double> est;
    for (std::uint64_t rep = 0; rep < 30; ++rep) {
      ad::Tape t;
      est.push_back(patched_loss(t, t.constant(patch), data, det, eot, 0.36, 1000 + rep).item());
    }
    double m = 0.0, v = 0.0;
    for (double e : est) m += e / est.size();
    for (double e : est) v += (e - m) * (e - m) / (est.size() - 1);
    variances.push_back(v);
  }
  for (std::size_t i = 1; i < variances.size(); ++i) EXPECT_LT(variances[i], variances[i - 1]);
}

TEST(ParseDetections, FormatsAndErrors) {
  std::istringstream ok("# header\n0 0.9 1 2 30 40\n\n3, 0.25, 5, 5, 9, 9\n");
  const auto d = parse_detections(ok, "ok");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].label, 0);
  EXPECT_EQ(d[0].score, 0.9);
  EXPECT_EQ(d[1].label, 3);
  EXPECT_EQ(d[1].box.x2, 9.0);

  for (const char* bad : {"0 0.9 1 2 30\n", "0 1.5 1 2 30 40\n", "0 0.5 5 5 1 1\n", "x 0.5 1 1 2 2\n",
                          "0 0.5 1 1 2 2 7\n"}) {
    std::istringstream in(std::string("0 0.1 0 0 1 1\n") + bad);
    try {
      parse_detections(in, "dets");
      ADD_FAILURE() << "accepted " << bad;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("dets:2"), std::string::npos) << e.what();
    }
  }
}

TEST(SubprocessDetector, RunsExternalCommand) {
  const fs::path dir = fs::temp_directory_path() / "pgecap_subprocess_test";
  fs::create_directories(dir);
  const fs::path script = dir / "fake_detector.sh";
  {
    std::ofstream s(script);
    s << "#!/bin/sh\n"
         "test -s \"$1\" || exit 1\n"
         "head -c 2 \"$1\" | grep -q P6 || exit 1\n"
         "echo '# fake'\n"
         "echo '0 0.8 1 2 10 20'\n"
         "echo '2 0.3 0 0 4 4'\n";
  }
  fs::permissions(script, fs::perms::owner_all);
  const SubprocessDetector det(script.string(), &write_ppm, dir / "scratch");
  const auto d = det.detect(uniform_image(8, 8, 0.5), {});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].score, 0.8);
  EXPECT_EQ(d[1].label, 2);
  EXPECT_TRUE(fs::is_empty(dir / "scratch"));

  const SubprocessDetector failing("false", &write_ppm, dir / "scratch");
  EXPECT_THROW(failing.detect(uniform_image(4, 4, 0.5), {}), DataError);
  fs::remove_all(dir);
}

TEST(ToyScenes, PersonPixelsMatchBoxes) {
  const auto data = small_scenes(5);
  ASSERT_EQ(data.size(), 5u);
  for (std::size_t i = 0; i < data.size(); ++i) {
    ASSERT_FALSE(data.boxes[i].empty());
    for (const Box& b : data.boxes[i]) {
      EXPECT_TRUE(b.valid());
      EXPECT_GE(b.x1, 0.0);
      EXPECT_LE(b.x2, 128.0);
      const auto y = static_cast<std::size_t>(b.y1 + 1), x = static_cast<std::size_t>(b.x1 + 1);
      EXPECT_EQ(data.images[i].at(0, y, x), 0.0);
    }
  }
  EXPECT_LT(max_abs_diff(make_toy_scenes({}).images[0], make_toy_scenes({}).images[0]), 1e-300);
}
