#pragma once

// End-to-end optimisation of the seed latent z_T: sample, decode, place the
// patch under EOT, score with a white-box detector, add the alignment terms
// and take an Adam step.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pgecap/alignment.hpp"
#include "pgecap/decoder.hpp"
#include "pgecap/detector.hpp"

namespace pgecap {

struct OptimizerConfig {
  double learning_rate = 5e-3;
  int epochs = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossWeights weights;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be > 0");
    weights.validate();
  }
};

struct AdamMoments {
  Tensor first;
  Tensor second;
  long steps = 0;
};

/// Bias-corrected Adam update of `variable` in place.
inline void adam_step(Tensor& variable, const Tensor& gradient, AdamMoments& moments,
                      const OptimizerConfig& opt) {
  require_same_shape(variable.shape, gradient.shape, "adam_step");
  if (!gradient.all_finite()) throw NumericalError("non-finite gradient in Adam step");
  if (moments.first.shape != variable.shape) {
    moments.first = Tensor(variable.shape);
    moments.second = Tensor(variable.shape);
    moments.steps = 0;
  }
  ++moments.steps;
  const double c1 = 1.0 - std::pow(opt.adam_beta1, static_cast<double>(moments.steps));
  const double c2 = 1.0 - std::pow(opt.adam_beta2, static_cast<double>(moments.steps));
  for (std::size_t i = 0; i < variable.size(); ++i) {
    const double g = gradient[i];
    moments.first[i] = opt.adam_beta1 * moments.first[i] + (1.0 - opt.adam_beta1) * g;
    moments.second[i] = opt.adam_beta2 * moments.second[i] + (1.0 - opt.adam_beta2) * g * g;
    const double m_hat = moments.first[i] / c1;
    const double v_hat = moments.second[i] / c2;
    variable[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.adam_eps);
  }
}

/// Frozen generative stack shared by every epoch of a run.
struct DiffusionModel {
  NoiseSchedule schedule;
  std::shared_ptr<const Denoiser> denoiser;
  Decoder decoder;
  TextEmbedding text;
  SamplerConfig sampler;
};

struct HistoryRow {
  int epoch = 0;
  double attack = 0.0;
  double prompt = 0.0;
  double latent = 0.0;
  double total = 0.0;
};

struct RunState {
  LatentState z_T;
  RunAnchors anchors;
  AdamMoments moments;
  int epoch = 0;
  std::vector<HistoryRow> history;
};

struct PatchMetadata {
  std::string prompt;
  std::uint64_t seed = 0;
  LossWeights weights;
  int epoch = 0;
};

struct AdversarialPatch {
  Tensor pixels;  // (3, H, W) in [0, 1]
  PatchMetadata metadata;
};

/// Images with their person boxes, as consumed by the attack.
struct AttackSet {
  std::vector<Tensor> images;
  std::vector<std::vector<Box>> boxes;

  std::size_t size() const { return images.size(); }
};

/// Draws z_T ~ N(0, I) from the seed and captures the anchors with one full
/// sampling run.
inline RunState initialize_run(std::uint64_t seed, const DiffusionModel& model) {
  Rng rng(derive_seed(seed, {0x2e7}));
  RunState state;
  state.z_T = LatentState{rng.normal_tensor(model.denoiser->latent_shape()), model.schedule.timesteps.front()};
  const auto trace = sample(state.z_T, model.text, *model.denoiser, model.schedule, model.sampler);
  state.anchors = RunAnchors{trace.attention, trace.z0};
  return state;
}

/// Loss terms and gradient for one epoch at a given z_T.
struct ObjectiveEvaluation {
  HistoryRow losses;
  Tensor gradient;  // d total / d z_T
  Tensor patch;     // decoded patch before EOT
  AttentionRecord attention;
  LatentState z0;
  std::size_t clipped_placements = 0;
};

struct AttackSettings {
  EOTConfig eot;
  double patch_scale = 0.36;
};

/// Evaluates the full objective at `z_T`. EOT draws depend only on
/// (seed, epoch, image, sample), so re-evaluating the same epoch is exact.
inline ObjectiveEvaluation evaluate_objective(const Tensor& z_T, int epoch, const RunState& state,
                                              const DiffusionModel& model, const AttackSet& data,
                                              const DifferentiableDetector& detector,
                                              const AttackSettings& attack,
                                              const OptimizerConfig& opt) {
  ad::Tape tape;
  auto zt = tape.variable(z_T);
  const auto trace = sample(zt, model.text, *model.denoiser, model.schedule, model.sampler);
  auto patch = model.decoder.decode(trace.z0);

  ObjectiveEvaluation ev;
  std::vector<std::vector<ScoredRegion>> detections;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int s = 0; s < attack.eot.samples_per_image; ++s) {
      Rng rng(derive_seed(opt.seed, {0xe07, static_cast<std::uint64_t>(epoch), i,
                                     static_cast<std::uint64_t>(s)}));
      const auto params = sample_transform(rng, attack.eot, patch.shape());
      const auto transformed = apply_transform(patch, params);
      auto img = tape.constant(data.images[i]);
      for (const Box& b : data.boxes[i]) {
        auto placed = place_patch(img, transformed, b, attack.patch_scale, params.dx, params.dy);
        if (placed.region.clipped) ++ev.clipped_placements;
        img = placed.image;
      }
      detections.push_back(detector.score(img, data.boxes[i]));
    }
  }
  auto l_attack = attack_loss(tape, detections, detector.person_class());
  auto l_prompt = prompt_alignment_loss(trace, state.anchors.attention_initial);
  auto l_latent = latent_alignment_loss(trace.z0, state.anchors.z0_initial);

  ev.losses = {epoch, l_attack.item(), l_prompt.item(), l_latent.item(), 0.0};
  if (!std::isfinite(ev.losses.attack) || !std::isfinite(ev.losses.prompt) ||
      !std::isfinite(ev.losses.latent)) {
    std::ostringstream os;
    os << "non-finite loss at epoch " << epoch << ": attack=" << ev.losses.attack
       << " prompt=" << ev.losses.prompt << " latent=" << ev.losses.latent;
    throw NumericalError(os.str());
  }
  auto total = total_loss(l_attack, l_prompt, l_latent, opt.weights);
  ev.losses.total = total.item();
  tape.backward(total);
  ev.gradient = tape.gradient(zt);
  ev.patch = patch.value();
  ev.attention = trace.attention_values();
  ev.z0 = LatentState{trace.z0.value(), 0};
  return ev;
}

struct OptimizeResult {
  AdversarialPatch patch;
  int best_epoch = 0;
  LatentState best_z_T;
  ObjectiveEvaluation final_evaluation;  // objective at the last epoch
  std::size_t clipped_placements = 0;
};

/// Runs opt.epochs Adam steps on state.z_T. The returned patch is the decoded
/// patch of the epoch with the lowest total loss.
inline OptimizeResult optimize(RunState& state, const DiffusionModel& model, const AttackSet& data,
                               const DifferentiableDetector& detector, const AttackSettings& attack,
                               const OptimizerConfig& opt, const std::string& prompt_text) {
  opt.validate();
  attack.eot.validate();
  if (data.size() == 0) throw DataError("attack dataset is empty");
  if (data.boxes.size() != data.images.size()) throw DataError("images and boxes disagree");

  OptimizeResult result;
  double best_total = std::numeric_limits<double>::infinity();
  for (int e = 0; e < opt.epochs; ++e) {
    auto ev = evaluate_objective(state.z_T.values, state.epoch, state, model, data, detector, attack, opt);
    result.clipped_placements += ev.clipped_placements;
    if (ev.losses.total < best_total) {
      best_total = ev.losses.total;
      result.best_epoch = state.epoch;
      result.patch.pixels = ev.patch;
      result.best_z_T = state.z_T;
    }
    state.history.push_back(ev.losses);
    adam_step(state.z_T.values, ev.gradient, state.moments, opt);
    ++state.epoch;
    result.final_evaluation = std::move(ev);
  }
  result.patch.metadata = PatchMetadata{prompt_text, opt.seed, opt.weights, result.best_epoch};
  return result;
}

}  // namespace pgecap
