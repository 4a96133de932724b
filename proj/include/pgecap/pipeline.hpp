#pragma once

// Command implementations behind the CLI: generate, eval-digital, eval-frames
// and ablate. Each takes explicit inputs and writes into an output directory.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgecap/config.hpp"
#include "pgecap/dataset.hpp"
#include "pgecap/evaluation.hpp"
#include "pgecap/io.hpp"
#include "pgecap/plot.hpp"

namespace pgecap {

inline constexpr std::uint64_t kConvDetectorSeed = 17;

/// Differentiable detector for generate; the command detector is eval-only.
inline std::unique_ptr<DifferentiableDetector> make_white_box_detector(const RunConfig& c) {
  switch (c.detector) {
    case DetectorKind::analytic: return std::make_unique<AnalyticColorDetector>();
    case DetectorKind::conv: return std::make_unique<ConvScorerDetector>(kConvDetectorSeed);
    case DetectorKind::command: break;
  }
  throw ConfigError("generate needs a differentiable detector (analytic or conv), not 'command'");
}

inline std::unique_ptr<Detector> make_detector(const RunConfig& c, const fs::path& scratch) {
  if (c.detector == DetectorKind::command) {
    return std::make_unique<SubprocessDetector>(c.detector_command, &write_ppm, scratch);
  }
  return make_white_box_detector(c);
}

// ---------------------------------------------------------------- generate

struct GenerateResult {
  RunState state;
  OptimizeResult optimize;
  std::size_t attention_maps = 0;
};

inline const HistoryRow& best_row(const GenerateResult& r) {
  return r.state.history.at(static_cast<std::size_t>(r.optimize.best_epoch));
}

/// Runs the attack without touching the filesystem.
inline GenerateResult run_generate(const RunConfig& c, const AttackSet& data, std::ostream* log = nullptr) {
  c.validate();
  const auto model = build_model(c);
  const auto detector = make_white_box_detector(c);
  GenerateResult r;
  r.state = initialize_run(c.seed, model);
  r.attention_maps = r.state.anchors.attention_initial.size();
  r.optimize = optimize(r.state, model, data, *detector, AttackSettings{c.eot, c.patch_scale}, c.optimizer, c.prompt);
  if (log) {
    for (const auto& h : r.state.history) {
      if (h.epoch % 10 == 0 || h.epoch + 1 == c.optimizer.epochs) {
        *log << "epoch " << h.epoch << "  attack " << h.attack << "  prompt " << h.prompt << "  latent "
             << h.latent << "  total " << h.total << '\n';
      }
    }
    if (r.optimize.clipped_placements > 0) {
      *log << "warning: " << r.optimize.clipped_placements
           << " patch placements extended past the image border and were clipped\n";
    }
  }
  return r;
}

inline const std::vector<std::string>& history_header() {
  static const std::vector<std::string> h{"epoch", "l_attack", "l_prompt", "l_latent", "total"};
  return h;
}

inline void write_history(const fs::path& path, const std::vector<HistoryRow>& history) {
  CsvWriter csv(path, history_header());
  for (const auto& h : history) {
    csv.row({std::to_string(h.epoch), fmt_double(h.attack), fmt_double(h.prompt), fmt_double(h.latent),
             fmt_double(h.total)});
  }
}

inline nlohmann::ordered_json losses_json(const HistoryRow& h) {
  return {{"epoch", h.epoch}, {"l_attack", h.attack}, {"l_prompt", h.prompt}, {"l_latent", h.latent},
          {"total", h.total}};
}

/// Writes config.json, patch.ppm, metadata.json, history.csv and loss.svg.
inline void write_generate_outputs(const fs::path& dir, const RunConfig& c, const GenerateResult& r) {
  fs::create_directories(dir);
  save_config(dir / "config.json", c);
  write_ppm(dir / "patch.ppm", r.optimize.patch.pixels);
  write_history(dir / "history.csv", r.state.history);

  const auto& md = r.optimize.patch.metadata;
  nlohmann::ordered_json j;
  j["prompt"] = md.prompt;
  j["seed"] = md.seed;
  j["weights"] = {{"attack", md.weights.attack}, {"prompt", md.weights.prompt}, {"latent", md.weights.latent}};
  j["epochs"] = c.optimizer.epochs;
  j["best_epoch"] = md.epoch;
  j["best_losses"] = losses_json(best_row(r));
  j["final_losses"] = losses_json(r.state.history.back());
  j["attention_steps"] = r.state.anchors.attention_initial.steps;
  j["attention_layers"] = r.state.anchors.attention_initial.layers;
  j["attention_maps"] = r.attention_maps;
  j["patch_shape"] = r.optimize.patch.pixels.shape;
  j["clipped_placements"] = r.optimize.clipped_placements;
  std::ofstream out(dir / "metadata.json");
  if (!out) throw DataError("cannot write metadata.json");
  out << j.dump(2) << '\n';

  std::vector<Series> curves(4);
  curves[0].name = "total";
  curves[1].name = "attack";
  curves[2].name = "prompt";
  curves[3].name = "latent";
  for (const auto& h : r.state.history) {
    for (auto& s : curves) s.x.push_back(h.epoch);
    curves[0].y.push_back(h.total);
    curves[1].y.push_back(h.attack);
    curves[2].y.push_back(h.prompt);
    curves[3].y.push_back(h.latent);
  }
  write_line_plot(dir / "loss.svg", "Loss by epoch", "epoch", "loss", curves);
}

inline GenerateResult command_generate(const RunConfig& c, std::ostream* log = nullptr) {
  c.validate();
  const auto data = to_attack_set(load_dataset(c.dataset));
  auto r = run_generate(c, data, log);
  write_generate_outputs(c.output_dir, c, r);
  return r;
}

// ------------------------------------------------------------ eval-digital

struct MetricsRow {
  std::string condition;  // clean, gray or patch
  std::optional<double> scale;
  double map50 = 0.0;
  double mean_max_confidence = 0.0;
};

struct PerImageRow {
  std::string condition;
  std::optional<double> scale;
  std::size_t image = 0;
  double max_confidence = 0.0;
  std::size_t detections = 0;  // person detections at or above the score threshold
};

struct DigitalEvalOptions {
  std::vector<double> scales{0.36};
  bool gray_baseline = true;
  bool eot = true;
  double score_threshold = 0.5;
  std::uint64_t seed = 0;
};

struct DigitalEvalResult {
  std::vector<MetricsRow> metrics;
  std::vector<PerImageRow> per_image;
};

/// Detects on every image (optionally patched), filters detections at the
/// score threshold for AP and records the unfiltered per-image maximum.
inline void evaluate_condition(const std::string& condition, std::optional<double> scale, const Tensor* patch,
                               const AttackSet& data, const Detector& detector, const EOTConfig& eot,
                               const DigitalEvalOptions& opt, DigitalEvalResult& out) {
  std::vector<DetectionSet> kept;
  double conf_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor img = data.images[i];
    if (patch != nullptr) {
      Rng rng(derive_seed(opt.seed, {0xe7a1, i}));
      const auto params = sample_transform(rng, eot, patch->shape);
      ad::Tape tape;
      const auto transformed = apply_transform(tape.constant(*patch), params);
      auto var = tape.constant(img);
      for (const Box& b : data.boxes[i]) var = place_patch(var, transformed, b, *scale, params.dx, params.dy).image;
      img = var.value();
    }
    const DetectionSet dets = detector.detect(img, data.boxes[i]);
    double best = 0.0;
    DetectionSet filtered;
    for (const auto& d : dets) {
      if (d.label != detector.person_class()) continue;
      best = std::max(best, d.score);
      if (d.score >= opt.score_threshold) filtered.push_back(d);
    }
    conf_sum += best;
    out.per_image.push_back({condition, scale, i, best, filtered.size()});
    kept.push_back(std::move(filtered));
  }
  out.metrics.push_back({condition, scale, map50(kept, data.boxes, detector.person_class()),
                         conf_sum / static_cast<double>(data.size())});
}

inline DigitalEvalResult run_eval_digital(const Tensor& patch, const AttackSet& data, const Detector& detector,
                                          const EOTConfig& eot, const DigitalEvalOptions& opt) {
  if (data.size() == 0) throw DataError("evaluation dataset is empty");
  if (opt.scales.empty()) throw ConfigError("no patch scales to evaluate");
  eot.validate();
  if (patch.rank() != 3 || patch.shape[0] != 3) throw ShapeError("patch must be (3, H, W)");
  const EOTConfig used = opt.eot ? eot : EOTConfig::identity();
  DigitalEvalResult out;
  evaluate_condition("clean", std::nullopt, nullptr, data, detector, used, opt, out);
  const Tensor gray(patch.shape, 0.5);
  for (double s : opt.scales) {
    if (!(s > 0.0 && s <= 1.0)) throw ConfigError("patch scale must lie in (0, 1]");
    if (opt.gray_baseline) evaluate_condition("gray", s, &gray, data, detector, used, opt, out);
    evaluate_condition("patch", s, &patch, data, detector, used, opt, out);
  }
  return out;
}

inline std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

inline const std::vector<std::string>& metrics_header() {
  static const std::vector<std::string> h{"condition", "scale", "map50", "mean_max_confidence"};
  return h;
}

inline const std::vector<std::string>& per_image_header() {
  static const std::vector<std::string> h{"condition", "scale", "image", "max_confidence", "detections"};
  return h;
}

inline void write_eval_outputs(const fs::path& dir, const DigitalEvalResult& r) {
  fs::create_directories(dir);
  {
    CsvWriter csv(dir / "metrics.csv", metrics_header());
    for (const auto& m : r.metrics) {
      csv.row({m.condition, fmt_optional(m.scale), fmt_double(m.map50), fmt_double(m.mean_max_confidence)});
    }
  }
  CsvWriter csv(dir / "per_image.csv", per_image_header());
  for (const auto& p : r.per_image) {
    csv.row({p.condition, fmt_optional(p.scale), std::to_string(p.image), fmt_double(p.max_confidence),
             std::to_string(p.detections)});
  }
}

// ------------------------------------------------------------- eval-frames

struct PostureReport {
  std::string posture;
  std::optional<std::size_t> frames;  // unset when the ASR was given directly
  std::optional<std::size_t> evaded;
  double asr = 0.0;
};

struct FramesReport {
  std::vector<PostureReport> postures;
  double mean = 0.0;
};

/// Frame file, one comma-separated record per line ('#' starts a comment):
///   outcome,<posture>,<frame>,<0|1>                  evaded flag given directly
///   subject,<posture>,<frame>,x1,y1,x2,y2            subject box of a frame
///   det,<posture>,<frame>,<class>,<score>,x1,y1,x2,y2 one detection in a frame
///   asr,<posture>,<percent>                         precomputed posture ASR
/// A frame with a subject row is judged with frame_evaded() on its det rows.
inline FramesReport evaluate_frames(std::istream& in, const std::string& source, double score_threshold = 0.5,
                                    double iou_threshold = 0.5) {
  struct Frame {
    std::optional<bool> outcome;
    std::optional<Box> subject;
    DetectionSet dets;
  };
  struct Posture {
    std::map<long, Frame> frames;
    std::optional<double> asr;
  };
  std::vector<std::string> order;
  std::map<std::string, Posture> postures;
  std::vector<std::string> errors;
  auto posture = [&](const std::string& name) -> Posture& {
    if (!postures.count(name)) order.push_back(name);
    return postures[name];
  };

  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) {
      const auto a = cell.find_first_not_of(" \t"), b = cell.find_last_not_of(" \t");
      f.push_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1));
    }
    const std::string where = source + ":" + std::to_string(lineno);
    try {
      auto number = [](const std::string& s) {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
      };
      auto index = [](const std::string& s) {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size() || v < 0) throw std::invalid_argument(s);
        return v;
      };
      auto box = [&](std::size_t at) {
        const Box b{number(f[at]), number(f[at + 1]), number(f[at + 2]), number(f[at + 3])};
        if (!b.valid()) throw std::invalid_argument("degenerate box");
        return b;
      };
      const std::string kind = f.empty() ? "" : f[0];
      if (kind == "outcome" && f.size() == 4) {
        if (f[3] != "0" && f[3] != "1") throw std::invalid_argument("evaded flag must be 0 or 1");
        posture(f[1]).frames[index(f[2])].outcome = f[3] == "1";
      } else if (kind == "subject" && f.size() == 7) {
        posture(f[1]).frames[index(f[2])].subject = box(3);
      } else if (kind == "det" && f.size() == 9) {
        const double score = number(f[4]);
        if (score < 0.0 || score > 1.0) throw std::invalid_argument("score outside [0, 1]");
        posture(f[1]).frames[index(f[2])].dets.push_back({box(5), static_cast<int>(index(f[3])), score});
      } else if (kind == "asr" && f.size() == 3) {
        const double v = number(f[2]);
        if (v < 0.0 || v > 100.0) throw std::invalid_argument("ASR outside [0, 100]");
        posture(f[1]).asr = v;
      } else {
        throw std::invalid_argument("unrecognised record '" + line + "'");
      }
      if (f.size() > 1 && f[1].empty()) throw std::invalid_argument("empty posture name");
    } catch (const std::exception& e) {
      errors.push_back(where + ": " + e.what());
    }
  }

  FramesReport report;
  std::vector<double> values;
  for (const auto& name : order) {
    const Posture& p = postures[name];
    PostureReport r{name, std::nullopt, std::nullopt, 0.0};
    if (p.asr && !p.frames.empty()) {
      errors.push_back(source + ": posture '" + name + "' has both an asr row and frame rows");
      continue;
    }
    if (p.asr) {
      r.asr = *p.asr;
    } else {
      FrameSequence seq;
      for (const auto& [idx, fr] : p.frames) {
        if (fr.outcome && fr.subject) {
          errors.push_back(source + ": posture '" + name + "' frame " + std::to_string(idx) +
                           " has both an outcome row and a subject row");
        } else if (fr.outcome) {
          seq.push_back({*fr.outcome});
        } else if (fr.subject) {
          seq.push_back({frame_evaded(fr.dets, *fr.subject, kPersonClass, score_threshold, iou_threshold)});
        } else {
          errors.push_back(source + ": posture '" + name + "' frame " + std::to_string(idx) +
                           " has detections but no subject row");
        }
      }
      if (seq.empty()) continue;
      r.frames = seq.size();
      r.evaded = static_cast<std::size_t>(
          std::count_if(seq.begin(), seq.end(), [](const FrameOutcome& o) { return o.evaded; }));
      r.asr = asr(seq);
    }
    values.push_back(r.asr);
    report.postures.push_back(std::move(r));
  }
  if (!errors.empty()) {
    std::string msg = "malformed frame file:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw DataError(msg);
  }
  if (report.postures.empty()) throw DataError(source + ": no frames or ASR rows");
  report.mean = mean_asr(values);
  return report;
}

inline const std::vector<std::string>& frames_header() {
  static const std::vector<std::string> h{"posture", "frames", "evaded", "asr"};
  return h;
}

/// One row per posture followed by a "mean" row.
inline void write_frames_report(const fs::path& path, const FramesReport& r) {
  CsvWriter csv(path, frames_header());
  for (const auto& p : r.postures) {
    csv.row({p.posture, p.frames ? std::to_string(*p.frames) : "", p.evaded ? std::to_string(*p.evaded) : "",
             fmt_double(p.asr)});
  }
  csv.row({"mean", "", "", fmt_double(r.mean)});
}

// ------------------------------------------------------------------ ablate

enum class AblationKind { weights, steps, scale, epochs };

inline AblationKind parse_ablation_kind(const std::string& s) {
  if (s == "weights") return AblationKind::weights;
  if (s == "steps") return AblationKind::steps;
  if (s == "scale") return AblationKind::scale;
  if (s == "epochs") return AblationKind::epochs;
  throw ConfigError("unknown ablation kind '" + s + "' (expected weights, steps, scale or epochs)");
}

inline std::string to_string(AblationKind k) {
  switch (k) {
    case AblationKind::weights: return "weights";
    case AblationKind::steps: return "steps";
    case AblationKind::scale: return "scale";
    case AblationKind::epochs: return "epochs";
  }
  return "?";
}

struct AblationCell {
  std::string value;  // grid label as written in the sweep CSV
  RunConfig config;
};

/// Grid syntax: comma-separated values; integer kinds also accept "a..b".
/// Weight cells are "beta:gamma" pairs, keeping the attack weight.
/// Cell k runs with seed base_seed + k.
inline std::vector<AblationCell> expand_grid(const RunConfig& base, AblationKind kind, const std::string& grid) {
  std::vector<std::string> items;
  std::istringstream is(grid);
  for (std::string item; std::getline(is, item, ',');) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char ch) { return std::isspace(ch); }),
               item.end());
    if (item.empty()) throw ConfigError("empty entry in ablation grid '" + grid + "'");
    const auto dots = item.find("..");
    if (dots != std::string::npos) {
      if (kind != AblationKind::steps && kind != AblationKind::epochs) {
        throw ConfigError("range syntax is only valid for steps and epochs");
      }
      int lo = 0, hi = 0;
      try {
        lo = std::stoi(item.substr(0, dots));
        hi = std::stoi(item.substr(dots + 2));
      } catch (const std::logic_error&) {
        throw ConfigError("bad grid range '" + item + "'");
      }
      if (lo > hi) throw ConfigError("empty grid range '" + item + "'");
      for (int v = lo; v <= hi; ++v) items.push_back(std::to_string(v));
    } else {
      items.push_back(item);
    }
  }
  if (items.empty()) throw ConfigError("ablation grid is empty");

  std::vector<AblationCell> cells;
  for (std::size_t k = 0; k < items.size(); ++k) {
    RunConfig c = base;
    set_seed(c, base.seed + k);
    const std::string& v = items[k];
    try {
      std::size_t used = 0;
      switch (kind) {
        case AblationKind::steps:
          c.sampler.num_steps = std::stoi(v, &used);
          break;
        case AblationKind::epochs:
          c.optimizer.epochs = std::stoi(v, &used);
          break;
        case AblationKind::scale:
          c.patch_scale = std::stod(v, &used);
          break;
        case AblationKind::weights: {
          const auto colon = v.find(':');
          if (colon == std::string::npos) throw ConfigError("weight cells are beta:gamma, got '" + v + "'");
          std::size_t u2 = 0;
          c.optimizer.weights.prompt = std::stod(v.substr(0, colon), &used);
          c.optimizer.weights.latent = std::stod(v.substr(colon + 1), &u2);
          if (used != colon || u2 != v.size() - colon - 1) throw std::invalid_argument(v);
          used = v.size();
          break;
        }
      }
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::logic_error&) {
      throw ConfigError("bad " + to_string(kind) + " grid value '" + v + "'");
    }
    cells.push_back({v, std::move(c)});
  }
  return cells;
}

struct CellResult {
  std::size_t index = 0;
  std::string value;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string message;
  std::size_t attention_maps = 0;
  int best_epoch = 0;
  HistoryRow best;
  double map50_clean = 0.0;
  double map50_patch = 0.0;
  double mean_max_confidence = 0.0;
  std::vector<HistoryRow> history;
};

inline const std::vector<std::string>& sweep_header() {
  static const std::vector<std::string> h{"kind",     "index",    "value",      "seed",        "status",
                                          "attention_maps", "best_epoch", "l_attack", "l_prompt", "l_latent",
                                          "total",    "map50_clean", "map50_patch", "mean_max_confidence", "message"};
  return h;
}

inline std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

inline std::string cell_dir_name(std::size_t index, const std::string& value) {
  std::string v = value;
  for (char& ch : v) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-') ch = '_';
  }
  return "cell_" + std::to_string(index) + "_" + v;
}

/// One generate + eval-digital cycle per grid cell, each in its own
/// subdirectory. A failing cell is recorded and the sweep continues.
inline std::vector<CellResult> run_ablation(const RunConfig& base, AblationKind kind, const std::string& grid,
                                            const AttackSet& data, const fs::path& out_dir,
                                            std::ostream* log = nullptr) {
  const auto cells = expand_grid(base, kind, grid);
  fs::create_directories(out_dir);
  std::vector<CellResult> results;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& cell = cells[k];
    CellResult r;
    r.index = k;
    r.value = cell.value;
    r.seed = cell.config.seed;
    try {
      RunConfig c = cell.config;
      c.output_dir = (out_dir / cell_dir_name(k, cell.value)).string();
      c.validate();
      const auto g = run_generate(c, data, nullptr);
      write_generate_outputs(c.output_dir, c, g);
      DigitalEvalOptions eo;
      eo.scales = {c.patch_scale};
      eo.gray_baseline = false;
      eo.seed = c.seed;
      const auto detector = make_white_box_detector(c);
      const auto ev = run_eval_digital(g.optimize.patch.pixels, data, *detector, c.eot, eo);
      write_eval_outputs(c.output_dir, ev);
      r.ok = true;
      r.attention_maps = g.attention_maps;
      r.best_epoch = g.optimize.best_epoch;
      r.best = best_row(g);
      r.map50_clean = ev.metrics.at(0).map50;
      r.map50_patch = ev.metrics.at(1).map50;
      r.mean_max_confidence = ev.metrics.at(1).mean_max_confidence;
      r.history = g.state.history;
    } catch (const std::exception& e) {
      r.ok = false;
      r.message = e.what();
    }
    if (log) {
      *log << to_string(kind) << " " << cell.value << ": " << (r.ok ? "ok" : "failed: " + r.message) << '\n';
    }
    results.push_back(std::move(r));
  }

  {
    CsvWriter csv(out_dir / "sweep.csv", sweep_header());
    for (const auto& r : results) {
      if (r.ok) {
        csv.row({to_string(kind), std::to_string(r.index), r.value, std::to_string(r.seed), "ok",
                 std::to_string(r.attention_maps), std::to_string(r.best_epoch), fmt_double(r.best.attack),
                 fmt_double(r.best.prompt), fmt_double(r.best.latent), fmt_double(r.best.total),
                 fmt_double(r.map50_clean), fmt_double(r.map50_patch), fmt_double(r.mean_max_confidence), ""});
      } else {
        csv.row({to_string(kind), std::to_string(r.index), r.value, std::to_string(r.seed), "failed", "", "", "",
                 "", "", "", "", "", "", csv_safe(r.message)});
      }
    }
  }

  const std::string title = "Ablation over " + to_string(kind);
  if (kind == AblationKind::weights) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& r : results) {
      labels.push_back(r.value);
      values.push_back(r.ok ? r.map50_patch : std::numeric_limits<double>::quiet_NaN());
    }
    write_bar_plot(out_dir / "sweep.svg", title, "beta:gamma", "mAP@50 with patch", labels, values);
  } else {
    Series map{"mAP@50 with patch", {}, {}}, attack{"attack loss (best epoch)", {}, {}};
    for (const auto& r : results) {
      if (!r.ok) continue;
      const double x = std::stod(r.value);
      map.x.push_back(x);
      map.y.push_back(r.map50_patch);
      attack.x.push_back(x);
      attack.y.push_back(r.best.attack);
    }
    write_line_plot(out_dir / "sweep.svg", title, to_string(kind), "value", {map, attack});
  }
  if (kind == AblationKind::epochs || kind == AblationKind::weights) {
    std::vector<Series> curves;
    for (const auto& r : results) {
      if (!r.ok) continue;
      Series s{to_string(kind) + " " + r.value, {}, {}};
      for (const auto& h : r.history) {
        s.x.push_back(h.epoch);
        s.y.push_back(h.total);
      }
      curves.push_back(std::move(s));
    }
    write_line_plot(out_dir / "loss_curves.svg", "Total loss by epoch", "epoch", "total loss", curves);
  }
  return results;
}

}  // namespace pgecap
