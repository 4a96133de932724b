#pragma once

// Run configuration: JSON round trip, validation and model construction.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "pgecap/optimizer.hpp"

namespace pgecap {

enum class DetectorKind { analytic, conv, command };

inline std::string to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::analytic: return "analytic";
    case DetectorKind::conv: return "conv";
    case DetectorKind::command: return "command";
  }
  return "?";
}

inline DetectorKind parse_detector_kind(const std::string& s) {
  if (s == "analytic") return DetectorKind::analytic;
  if (s == "conv") return DetectorKind::conv;
  if (s == "command") return DetectorKind::command;
  throw ConfigError("unknown detector '" + s + "' (expected analytic, conv or command)");
}

struct RunConfig {
  std::string prompt = "a picture full of leaf-like green colors";
  std::uint64_t seed = 0;
  std::size_t embedding_tokens = 8;
  std::size_t embedding_dims = 16;
  int horizon = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SamplerConfig sampler;
  OptimizerConfig optimizer;
  EOTConfig eot;
  double patch_scale = 0.36;
  std::string dataset = "data/annotations.jsonl";
  DetectorKind detector = DetectorKind::analytic;
  std::string detector_command;
  std::string output_dir = "out";

  void validate() const {
    (void)Prompt{prompt};
    if (embedding_tokens < 1 || embedding_dims < 1) throw ConfigError("embedding sizes must be >= 1");
    sampler.validate();
    if (horizon < 1) throw ConfigError("schedule horizon must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
      throw ConfigError("need 0 < beta_start <= beta_end < 1");
    }
    if (sampler.num_steps > horizon) throw ConfigError("sampler steps exceed the schedule horizon");
    optimizer.validate();
    eot.validate();
    if (!(patch_scale > 0.0 && patch_scale <= 1.0)) throw ConfigError("patch scale must lie in (0, 1]");
    if (dataset.empty()) throw ConfigError("dataset path is empty");
    if (detector == DetectorKind::command && detector_command.empty()) {
      throw ConfigError("detector 'command' needs detector_command");
    }
    if (output_dir.empty()) throw ConfigError("output directory is empty");
  }
};

namespace detail {

inline nlohmann::ordered_json range_json(const Range& r) { return {r.lo, r.hi}; }

inline Range range_from(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("eot." + key + " must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

// Unknown keys are errors.
inline void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + where + k + "'");
  }
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["prompt"] = c.prompt;
  j["seed"] = c.seed;
  j["embedding"] = {{"tokens", c.embedding_tokens}, {"dims", c.embedding_dims}};
  j["schedule"] = {{"horizon", c.horizon}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
  j["sampler"] = {{"steps", c.sampler.num_steps},
                  {"guidance_scale", c.sampler.guidance_scale},
                  {"stochastic", c.sampler.sigma_mode == SigmaMode::stochastic}};
  const auto& o = c.optimizer;
  j["optimizer"] = {{"learning_rate", o.learning_rate},
                    {"epochs", o.epochs},
                    {"adam_beta1", o.adam_beta1},
                    {"adam_beta2", o.adam_beta2},
                    {"adam_eps", o.adam_eps},
                    {"weights", {{"attack", o.weights.attack}, {"prompt", o.weights.prompt}, {"latent", o.weights.latent}}}};
  j["eot"] = {{"contrast", detail::range_json(c.eot.contrast)},
              {"brightness", detail::range_json(c.eot.brightness)},
              {"noise", detail::range_json(c.eot.noise)},
              {"rotation_deg", detail::range_json(c.eot.rotation_deg)},
              {"location", detail::range_json(c.eot.location)},
              {"samples_per_image", c.eot.samples_per_image}};
  j["patch_scale"] = c.patch_scale;
  j["dataset"] = c.dataset;
  j["detector"] = {{"kind", to_string(c.detector)}, {"command", c.detector_command}};
  j["output_dir"] = c.output_dir;
  return j;
}

/// Missing keys keep their defaults; unknown keys and wrong types are errors.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    detail::check_keys(j, {"prompt", "seed", "embedding", "schedule", "sampler", "optimizer", "eot", "patch_scale",
                           "dataset", "detector", "output_dir"},
                       "");
    if (j.contains("prompt")) c.prompt = j["prompt"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("embedding")) {
      const auto& e = j["embedding"];
      detail::check_keys(e, {"tokens", "dims"}, "embedding.");
      if (e.contains("tokens")) c.embedding_tokens = e["tokens"].get<std::size_t>();
      if (e.contains("dims")) c.embedding_dims = e["dims"].get<std::size_t>();
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      detail::check_keys(s, {"horizon", "beta_start", "beta_end"}, "schedule.");
      if (s.contains("horizon")) c.horizon = s["horizon"].get<int>();
      if (s.contains("beta_start")) c.beta_start = s["beta_start"].get<double>();
      if (s.contains("beta_end")) c.beta_end = s["beta_end"].get<double>();
    }
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      detail::check_keys(s, {"steps", "guidance_scale", "stochastic"}, "sampler.");
      if (s.contains("steps")) c.sampler.num_steps = s["steps"].get<int>();
      if (s.contains("guidance_scale")) c.sampler.guidance_scale = s["guidance_scale"].get<double>();
      if (s.contains("stochastic")) {
        c.sampler.sigma_mode = s["stochastic"].get<bool>() ? SigmaMode::stochastic : SigmaMode::deterministic;
      }
    }
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      detail::check_keys(o, {"learning_rate", "epochs", "adam_beta1", "adam_beta2", "adam_eps", "weights"},
                         "optimizer.");
      auto& t = c.optimizer;
      if (o.contains("learning_rate")) t.learning_rate = o["learning_rate"].get<double>();
      if (o.contains("epochs")) t.epochs = o["epochs"].get<int>();
      if (o.contains("adam_beta1")) t.adam_beta1 = o["adam_beta1"].get<double>();
      if (o.contains("adam_beta2")) t.adam_beta2 = o["adam_beta2"].get<double>();
      if (o.contains("adam_eps")) t.adam_eps = o["adam_eps"].get<double>();
      if (o.contains("weights")) {
        const auto& w = o["weights"];
        detail::check_keys(w, {"attack", "prompt", "latent"}, "optimizer.weights.");
        if (w.contains("attack")) t.weights.attack = w["attack"].get<double>();
        if (w.contains("prompt")) t.weights.prompt = w["prompt"].get<double>();
        if (w.contains("latent")) t.weights.latent = w["latent"].get<double>();
      }
    }
    if (j.contains("eot")) {
      const auto& e = j["eot"];
      detail::check_keys(e, {"contrast", "brightness", "noise", "rotation_deg", "location", "samples_per_image"},
                         "eot.");
      for (auto [key, range] : {std::pair{"contrast", &c.eot.contrast}, std::pair{"brightness", &c.eot.brightness},
                                std::pair{"noise", &c.eot.noise}, std::pair{"rotation_deg", &c.eot.rotation_deg},
                                std::pair{"location", &c.eot.location}}) {
        if (e.contains(key)) *range = detail::range_from(e[key], key);
      }
      if (e.contains("samples_per_image")) c.eot.samples_per_image = e["samples_per_image"].get<int>();
    }
    if (j.contains("patch_scale")) c.patch_scale = j["patch_scale"].get<double>();
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("detector")) {
      const auto& d = j["detector"];
      detail::check_keys(d, {"kind", "command"}, "detector.");
      if (d.contains("kind")) c.detector = parse_detector_kind(d["kind"].get<std::string>());
      if (d.contains("command")) c.detector_command = d["command"].get<std::string>();
    }
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  c.sampler.seed = c.seed;
  c.optimizer.seed = c.seed;
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

inline void set_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.sampler.seed = seed;
  c.optimizer.seed = seed;
}

inline constexpr const char* kSeedEnv = "PGECAP_SEED";

/// Applies the PGECAP_SEED override when the variable is set.
inline void apply_seed_override(RunConfig& c) {
  const char* v = std::getenv(kSeedEnv);
  if (v == nullptr) return;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (end == v || *end != '\0') throw ConfigError(std::string(kSeedEnv) + " is not an unsigned integer: " + v);
  set_seed(c, s);
}

/// Builds the frozen generative stack. Denoiser, decoder and text encoder are
/// all initialised from the run seed.
inline DiffusionModel build_model(const RunConfig& c) {
  c.validate();
  auto schedule = build_schedule(c.horizon, c.beta_start, c.beta_end, c.sampler.num_steps);
  ReferenceDenoiser::Options dopt;
  dopt.text_dim = c.embedding_dims;
  auto denoiser = std::make_shared<ReferenceDenoiser>(schedule, c.seed, dopt);
  return DiffusionModel{schedule, std::move(denoiser), Decoder(c.seed),
                        embed_prompt(Prompt{c.prompt}, c.embedding_tokens, c.embedding_dims, c.seed), c.sampler};
}

}  // namespace pgecap
