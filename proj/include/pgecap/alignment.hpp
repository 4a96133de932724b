#pragma once

// Prompt alignment (attention-map cosine), latent alignment, and the weighted
// total objective.

#include <cmath>
#include <vector>

#include "pgecap/sampler.hpp"

namespace pgecap {

struct LossWeights {
  double attack = 1.0;
  double prompt = 5.0;
  double latent = 0.1;

  void validate() const {
    if (!(attack >= 0.0 && prompt >= 0.0 && latent >= 0.0)) {
      throw ConfigError("loss weights must be non-negative");
    }
    if (attack == 0.0 && prompt == 0.0 && latent == 0.0) {
      throw ConfigError("loss weights must not all be zero");
    }
  }
};

/// Captured once per run before the first update; never modified afterwards.
struct RunAnchors {
  AttentionRecord attention_initial;
  LatentState z0_initial;
};

namespace detail {
inline void check_record_shapes(std::size_t steps, std::size_t layers, std::size_t count,
                                const AttentionRecord& initial) {
  if (steps != initial.steps || layers != initial.layers || count != initial.maps.size() ||
      !initial.complete()) {
    throw ShapeError("attention records have different (step, layer) grids");
  }
}
}  // namespace detail

/// 1 - mean over (step, layer) of cos(A_ij, A_ij^initial) on flattened maps.
inline ad::Var prompt_alignment_loss(const TapedTrace& current, const AttentionRecord& initial) {
  detail::check_record_shapes(current.steps, current.layers, current.attention.size(), initial);
  if (current.attention.empty()) throw ShapeError("empty attention record");
  ad::Tape& tape = current.attention.front().tape();
  std::vector<ad::Var> cosines;
  cosines.reserve(current.attention.size());
  for (std::size_t i = 0; i < current.attention.size(); ++i) {
    require_same_shape(current.attention[i].shape(), initial.maps[i].shape, "attention map");
    cosines.push_back(ad::cosine_similarity(current.attention[i], tape.constant(initial.maps[i])));
  }
  return ad::add_scalar(ad::scale(ad::mean_of(cosines), -1.0), 1.0);
}

inline double prompt_alignment_loss(const AttentionRecord& current, const AttentionRecord& initial) {
  if (!current.complete()) throw ShapeError("incomplete attention record");
  detail::check_record_shapes(current.steps, current.layers, current.maps.size(), initial);
  if (current.maps.empty()) throw ShapeError("empty attention record");
  ad::Tape tape;
  TapedTrace t;
  t.steps = current.steps;
  t.layers = current.layers;
  for (const auto& m : current.maps) t.attention.push_back(tape.constant(m));
  return prompt_alignment_loss(t, initial).item();
}

/// mean(1 - exp(-(z0 - z0_initial)^2)).
inline ad::Var latent_alignment_loss(ad::Var z0, const LatentState& z0_initial) {
  require_same_shape(z0.shape(), z0_initial.values.shape, "latent_alignment_loss");
  Tensor neg = z0_initial.values;
  for (double& v : neg.data) v = -v;
  auto d2 = ad::square(ad::add_constant(z0, neg));
  auto g = ad::exp(ad::scale(d2, -1.0));
  return ad::add_scalar(ad::scale(ad::mean(g), -1.0), 1.0);
}

inline double latent_alignment_loss(const LatentState& z0, const LatentState& z0_initial) {
  if (z0.timestep != 0 || z0_initial.timestep != 0) {
    throw std::invalid_argument("latent alignment compares final (t = 0) latents");
  }
  ad::Tape tape;
  return latent_alignment_loss(tape.constant(z0.values), z0_initial).item();
}

inline double total_loss(double l_attack, double l_prompt, double l_latent, const LossWeights& w) {
  if (!std::isfinite(l_attack) || !std::isfinite(l_prompt) || !std::isfinite(l_latent)) {
    throw NumericalError("non-finite loss component");
  }
  return w.attack * l_attack + w.prompt * l_prompt + w.latent * l_latent;
}

inline ad::Var total_loss(ad::Var l_attack, ad::Var l_prompt, ad::Var l_latent, const LossWeights& w) {
  total_loss(l_attack.item(), l_prompt.item(), l_latent.item(), w);
  const ad::Var parts[] = {l_attack, l_prompt, l_latent};
  const double weights[] = {w.attack, w.prompt, w.latent};
  return ad::weighted_sum(parts, weights);
}

}  // namespace pgecap
