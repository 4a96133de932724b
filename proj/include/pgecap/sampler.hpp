#pragma once

#include <cstdint>
#include <vector>

#include "pgecap/denoiser.hpp"

namespace pgecap {

/// Cross-attention maps indexed by (sampling step, attention layer).
struct AttentionRecord {
  std::size_t steps = 0;
  std::size_t layers = 0;
  std::vector<Tensor> maps;  // row-major over (step, layer), each (queries, tokens)

  const Tensor& at(std::size_t step, std::size_t layer) const { return maps.at(step * layers + layer); }
  std::size_t size() const { return maps.size(); }
  bool complete() const { return maps.size() == steps * layers; }
};

struct DiffusionTrace {
  LatentState z0;
  AttentionRecord attention;
  std::vector<LatentState> intermediates;  // z_T first, z_0 last
};

/// Sampling run recorded on a tape, so z_0 and every attention map are
/// differentiable functions of z_T.
struct TapedTrace {
  ad::Var z0;
  std::size_t steps = 0;
  std::size_t layers = 0;
  std::vector<ad::Var> attention;  // (step, layer) row-major
  std::vector<ad::Var> intermediates;

  AttentionRecord attention_values() const {
    AttentionRecord r{steps, layers, {}};
    for (const auto& v : attention) r.maps.push_back(v.value());
    return r;
  }
};

/// Guided DDIM sampling over schedule.timesteps starting from z_T (on the tape).
/// Attention maps come from the conditional branch only.
inline TapedTrace sample(ad::Var z_T, const TextEmbedding& text, const Denoiser& denoiser,
                         const NoiseSchedule& schedule, const SamplerConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(config.num_steps) != schedule.timesteps.size()) {
    throw ConfigError("sampler steps (" + std::to_string(config.num_steps) +
                      ") disagree with the schedule (" +
                      std::to_string(schedule.timesteps.size()) + ")");
  }
  require_same_shape(z_T.shape(), denoiser.latent_shape(), "sample z_T");
  ad::Tape& tape = z_T.tape();
  auto cond = tape.constant(text.values);
  auto uncond = tape.constant(TextEmbedding::empty(text.tokens(), text.dims()).values);

  TapedTrace trace;
  trace.steps = schedule.timesteps.size();
  trace.layers = denoiser.attention_layers();
  trace.intermediates.push_back(z_T);
  Rng noise_rng(derive_seed(config.seed, {0x5a}));

  ad::Var z = z_T;
  for (std::size_t i = 0; i < schedule.timesteps.size(); ++i) {
    const int t = schedule.timesteps[i];
    const int t_prev = schedule.previous(i);
    auto pc = denoiser.predict(z, t, cond);
    auto pu = denoiser.predict(z, t, uncond);
    if (pc.attention.size() != trace.layers) {
      throw std::logic_error("denoiser returned an incomplete attention set");
    }
    require_same_shape(pc.eps.shape(), z.shape(), "denoiser output");
    for (auto& m : pc.attention) trace.attention.push_back(m);

    auto eps = cfg_combine(pu.eps, pc.eps, config.guidance_scale);
    const double abar_t = schedule.alpha_bar(t);
    const double abar_prev = schedule.alpha_bar(t_prev);
    double sigma = 0.0;
    Tensor xi;
    if (config.sigma_mode == SigmaMode::stochastic) {
      sigma = ddim_sigma(abar_t, abar_prev);
      xi = noise_rng.normal_tensor(z.shape());
    }
    z = ddim_step(z, eps, abar_t, abar_prev, sigma, xi);
    trace.intermediates.push_back(z);
  }
  if (trace.attention.size() != trace.steps * trace.layers) {
    throw std::logic_error("attention capture incomplete");
  }
  trace.z0 = z;
  return trace;
}

/// Value-only sampling run.
inline DiffusionTrace sample(const LatentState& z_T, const TextEmbedding& text,
                             const Denoiser& denoiser, const NoiseSchedule& schedule,
                             const SamplerConfig& config) {
  if (schedule.timesteps.empty() || z_T.timestep != schedule.timesteps.front()) {
    throw std::invalid_argument("z_T must sit at the largest sampler timestep");
  }
  ad::Tape tape;
  auto traced = sample(tape.constant(z_T.values), text, denoiser, schedule, config);
  DiffusionTrace out;
  out.z0 = LatentState{traced.z0.value(), 0};
  out.attention = traced.attention_values();
  for (std::size_t i = 0; i < traced.intermediates.size(); ++i) {
    const int t = i < schedule.timesteps.size() ? schedule.timesteps[i] : 0;
    out.intermediates.push_back(LatentState{traced.intermediates[i].value(), t});
  }
  return out;
}

}  // namespace pgecap
