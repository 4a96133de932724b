#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "pgecap/alignment.hpp"

using namespace pgecap;

namespace {

AttentionRecord record_of(std::vector<Tensor> maps, std::size_t steps, std::size_t layers) {
  return {steps, layers, std::move(maps)};
}

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

AttentionRecord random_record(std::uint64_t seed, std::size_t steps = 3, std::size_t layers = 2) {
  Rng rng(seed);
  AttentionRecord r{steps, layers, {}};
  for (std::size_t i = 0; i < steps * layers; ++i) {
    Tensor m({4, 5});
    for (std::size_t q = 0; q < 4; ++q) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += (m[q * 5 + k] = rng.uniform(0.01, 1.0));
      for (std::size_t k = 0; k < 5; ++k) m[q * 5 + k] /= s;
    }
    r.maps.push_back(std::move(m));
  }
  return r;
}

LatentState final_latent(Tensor v) { return {std::move(v), 0}; }

}  // namespace

TEST(PromptAlignment, HandValues) {
  EXPECT_NEAR(prompt_alignment_loss(record_of({row({0.5, 0.5})}, 1, 1), record_of({row({1, 0})}, 1, 1)),
              1.0 - std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(prompt_alignment_loss(record_of({row({0.5, 0.5})}, 1, 1), record_of({row({1, 0})}, 1, 1)), 0.2929,
              1e-4);
  EXPECT_EQ(prompt_alignment_loss(record_of({row({1, 0})}, 1, 1), record_of({row({0, 1})}, 1, 1)), 1.0);
}

TEST(PromptAlignment, ZeroAtSelfPositiveOtherwise) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = random_record(s);
    EXPECT_EQ(prompt_alignment_loss(a, a), 0.0);
    auto b = a;
    b.maps[s % b.maps.size()][3] += 0.2;
    EXPECT_GT(prompt_alignment_loss(b, a), 0.0);
    const double l = prompt_alignment_loss(random_record(s + 100), a);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
  }
}

TEST(PromptAlignment, ScaleInvariantPerMap) {
  const auto a = random_record(1);
  auto b = a;
  for (double& v : b.maps[2].data) v *= 4.0;
  EXPECT_NEAR(prompt_alignment_loss(b, a), 0.0, 1e-15);
}

TEST(PromptAlignment, Errors) {
  const auto a = random_record(1, 3, 2);
  EXPECT_THROW(prompt_alignment_loss(random_record(2, 2, 3), a), ShapeError);
  EXPECT_THROW(prompt_alignment_loss(random_record(2, 3, 1), a), ShapeError);
  auto b = a;
  b.maps[0] = Tensor({4, 5});
  EXPECT_THROW(prompt_alignment_loss(b, a), NumericalError);
  auto c = a;
  c.maps[1] = Tensor({5, 4}, 0.2);
  EXPECT_THROW(prompt_alignment_loss(c, a), ShapeError);
}

TEST(PromptAlignment, GradientMatchesFiniteDifferences) {
  const auto initial = random_record(3, 2, 2);
  const Tensor logits = Rng(4).normal_tensor({4, 4, 5});
  auto r = pgecap::testing::check_gradient(logits, [&](ad::Tape&, ad::Var x) {
    TapedTrace t;
    t.steps = 2;
    t.layers = 2;
    for (std::size_t i = 0; i < 4; ++i) {
      Tensor pick({4, 4, 5});
      std::fill(pick.data.begin() + static_cast<long>(i * 20), pick.data.begin() + static_cast<long>((i + 1) * 20), 1.0);
      ad::SparseMap m{80, {4, 5}, {}};
      for (std::size_t k = 0; k < 20; ++k) m.entries.push_back({k, i * 20 + k, 1.0});
      t.attention.push_back(ad::softmax_rows(ad::sparse_linear(x, m, Tensor({4, 5}))));
    }
    return prompt_alignment_loss(t, initial);
  }, 80, 1);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(LatentAlignment, HandValues) {
  EXPECT_EQ(latent_alignment_loss(final_latent(Tensor({3}, 0.7)), final_latent(Tensor({3}, 0.7))), 0.0);
  EXPECT_NEAR(latent_alignment_loss(final_latent(Tensor({1}, 1.0)), final_latent(Tensor({1}, 0.0))),
              1.0 - std::exp(-1.0), 1e-15);
  EXPECT_NEAR(latent_alignment_loss(final_latent(Tensor({1}, 1.0)), final_latent(Tensor({1}, 0.0))), 0.6321206,
              1e-7);
  const double d1 = latent_alignment_loss(final_latent(Tensor({1}, 1.0)), final_latent(Tensor({1}, 0.0)));
  const double d10 = latent_alignment_loss(final_latent(Tensor({1}, 10.0)), final_latent(Tensor({1}, 0.0)));
  EXPECT_GT(d10, d1);
  EXPECT_LE(d10, 1.0);
}

TEST(LatentAlignment, PermutationInvariant) {
  Rng rng(5);
  const Tensor a = rng.normal_tensor({16}), b = rng.normal_tensor({16});
  std::vector<std::size_t> perm(16);
  for (std::size_t i = 0; i < 16; ++i) perm[i] = (i * 7 + 3) % 16;
  Tensor pa({16}), pb({16});
  for (std::size_t i = 0; i < 16; ++i) {
    pa[i] = a[perm[i]];
    pb[i] = b[perm[i]];
  }
  EXPECT_NEAR(latent_alignment_loss(final_latent(a), final_latent(b)),
              latent_alignment_loss(final_latent(pa), final_latent(pb)), 1e-15);
}

TEST(LatentAlignment, Errors) {
  EXPECT_THROW(latent_alignment_loss(final_latent(Tensor({3})), final_latent(Tensor({4}))), ShapeError);
  EXPECT_THROW(latent_alignment_loss(LatentState{Tensor({3}), 2}, final_latent(Tensor({3}))),
               std::invalid_argument);
}

TEST(LatentAlignment, GradientMatchesFiniteDifferences) {
  const LatentState anchor = final_latent(Rng(6).normal_tensor({4, 8, 8}));
  const Tensor z = Rng(7).normal_tensor({4, 8, 8});
  auto r = pgecap::testing::check_gradient(z, [&](ad::Tape&, ad::Var v) { return latent_alignment_loss(v, anchor); },
                                           256, 1);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(TotalLoss, ArithmeticAndDefaults) {
  const LossWeights w;
  EXPECT_EQ(w.attack, 1.0);
  EXPECT_EQ(w.prompt, 5.0);
  EXPECT_EQ(w.latent, 0.1);
  EXPECT_NEAR(total_loss(0.8, 0.1, 0.2, w), 1.32, 1e-12);
  EXPECT_EQ(total_loss(0.0, 0.0, 0.0, w), 0.0);
}

TEST(TotalLoss, LinearInEachComponent) {
  const LossWeights w{0.7, 3.0, 0.25};
  const double base = total_loss(0.3, 0.2, 0.1, w);
  EXPECT_NEAR(total_loss(0.3 + 0.5, 0.2, 0.1, w) - base, 0.7 * 0.5, 1e-12);
  EXPECT_NEAR(total_loss(0.3, 0.2 + 0.5, 0.1, w) - base, 3.0 * 0.5, 1e-12);
  EXPECT_NEAR(total_loss(0.3, 0.2, 0.1 + 0.5, w) - base, 0.25 * 0.5, 1e-12);
}

TEST(TotalLoss, Errors) {
  EXPECT_THROW(total_loss(NAN, 0.0, 0.0, LossWeights{}), NumericalError);
  EXPECT_THROW(total_loss(0.0, INFINITY, 0.0, LossWeights{}), NumericalError);
  EXPECT_THROW((LossWeights{0, 0, 0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{-1, 0, 0}.validate()), ConfigError);
}
