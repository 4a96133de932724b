// pgecap: command-line front end.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "pgecap/pipeline.hpp"

namespace {

using namespace pgecap;

struct RunOverrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> prompt;
  std::optional<int> epochs;
  std::optional<int> steps;
  std::optional<double> scale;
  std::optional<std::string> dataset;
  std::optional<std::string> detector;
  std::optional<std::string> detector_command;
  std::optional<std::string> out;

  void add_to(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON run configuration (defaults apply to missing keys)");
    cmd->add_option("--seed", seed, "Run seed (overrides the config file and PGECAP_SEED)");
    cmd->add_option("--prompt", prompt, "Environment prompt");
    cmd->add_option("--epochs", epochs, "Optimisation epochs");
    cmd->add_option("--steps", steps, "DDIM sampling steps");
    cmd->add_option("--scale", scale, "Patch side as a fraction of the person box height");
    cmd->add_option("--dataset", dataset, "Annotation file (JSON lines)");
    cmd->add_option("--detector", detector, "analytic, conv or command");
    cmd->add_option("--detector-command", detector_command, "Executable for the command detector");
    cmd->add_option("-o,--out", out, "Output directory");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    apply_seed_override(c);
    if (seed) set_seed(c, *seed);
    if (prompt) c.prompt = *prompt;
    if (epochs) c.optimizer.epochs = *epochs;
    if (steps) c.sampler.num_steps = *steps;
    if (scale) c.patch_scale = *scale;
    if (dataset) c.dataset = *dataset;
    if (detector) c.detector = parse_detector_kind(*detector);
    if (detector_command) c.detector_command = *detector_command;
    if (out) c.output_dir = *out;
    c.validate();
    return c;
  }
};

void print_metrics(const DigitalEvalResult& r) {
  std::cout << "condition  scale  map50  mean_max_confidence\n";
  for (const auto& m : r.metrics) {
    std::cout << m.condition << "  " << (m.scale ? fmt_double(*m.scale) : "-") << "  " << m.map50 << "  "
              << m.mean_max_confidence << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-guided environmental camouflage patches: generation and evaluation"};
  app.require_subcommand(1);

  RunOverrides gen;
  auto* generate = app.add_subcommand("generate", "Optimise a patch and write patch.ppm, metadata.json, history.csv");
  gen.add_to(generate);
  bool quiet = false;
  generate->add_flag("-q,--quiet", quiet, "Suppress per-epoch progress");

  RunOverrides ev;
  std::string patch_path;
  std::vector<double> scales;
  bool scale_sweep = false, no_eot = false, no_gray = false;
  double threshold = 0.5;
  auto* eval = app.add_subcommand("eval-digital", "mAP@50 and confidence with and without the patch");
  ev.add_to(eval);
  eval->add_option("--patch", patch_path, "Patch image (binary PPM)")->required()->check(CLI::ExistingFile);
  eval->add_option("--scales", scales, "Patch scales to evaluate (default: config scale)")->delimiter(',');
  eval->add_flag("--scale-sweep", scale_sweep, "Evaluate scales 0.32, 0.34, 0.36, 0.38, 0.40");
  eval->add_flag("--no-eot", no_eot, "Place the patch without random transforms");
  eval->add_flag("--no-gray", no_gray, "Skip the uniform gray patch baseline");
  eval->add_option("--threshold", threshold, "Detection score threshold for AP")->check(CLI::Range(0.0, 1.0));

  std::string frames_path, frames_out;
  double frame_score = 0.5, frame_iou = 0.5;
  auto* frames = app.add_subcommand("eval-frames", "Per-posture and mean attack success rate from frame records");
  frames->add_option("file", frames_path, "Frame record file")->required()->check(CLI::ExistingFile);
  frames->add_option("-o,--out", frames_out, "Write the report CSV here as well as to stdout");
  frames->add_option("--score-threshold", frame_score, "Person score that counts as detected")
      ->check(CLI::Range(0.0, 1.0));
  frames->add_option("--iou-threshold", frame_iou, "Overlap with the subject that counts as detected")
      ->check(CLI::Range(0.0, 1.0));

  RunOverrides ab;
  std::string kind, grid;
  auto* ablate = app.add_subcommand("ablate", "Sweep one setting; one generate + eval cycle per grid value");
  ab.add_to(ablate);
  ablate->add_option("--kind", kind, "weights, steps, scale or epochs")->required();
  ablate->add_option("--grid", grid, "Comma-separated values, a..b ranges for integers, beta:gamma for weights")
      ->required();

  std::string data_dir;
  std::size_t data_images = 8;
  std::uint64_t data_seed = 7;
  auto* make_data = app.add_subcommand("make-dataset", "Write the synthetic pedestrian scenes");
  make_data->add_option("-o,--out", data_dir, "Output directory")->required();
  make_data->add_option("--images", data_images, "Number of scenes")->check(CLI::PositiveNumber);
  make_data->add_option("--seed", data_seed, "Scene seed");

  std::string config_out;
  auto* config = app.add_subcommand("config", "Print the default run configuration");
  config->add_option("-o,--out", config_out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*generate) {
      const RunConfig c = gen.resolve();
      command_generate(c, quiet ? nullptr : &std::cerr);
      std::cout << "wrote " << c.output_dir << "/patch.ppm\n";
    } else if (*eval) {
      const RunConfig c = ev.resolve();
      const auto data = to_attack_set(load_dataset(c.dataset));
      const Tensor patch = read_ppm(patch_path);
      DigitalEvalOptions opt;
      opt.scales = scale_sweep ? std::vector<double>{0.32, 0.34, 0.36, 0.38, 0.40}
                               : (scales.empty() ? std::vector<double>{c.patch_scale} : scales);
      opt.eot = !no_eot;
      opt.gray_baseline = !no_gray;
      opt.score_threshold = threshold;
      opt.seed = c.seed;
      const auto detector = make_detector(c, fs::path(c.output_dir) / "scratch");
      const auto r = run_eval_digital(patch, data, *detector, c.eot, opt);
      write_eval_outputs(c.output_dir, r);
      save_config(fs::path(c.output_dir) / "config.json", c);
      print_metrics(r);
    } else if (*frames) {
      std::ifstream in(frames_path);
      if (!in) throw DataError("cannot open " + frames_path);
      const auto r = evaluate_frames(in, frames_path, frame_score, frame_iou);
      if (!frames_out.empty()) write_frames_report(frames_out, r);
      std::cout << "posture,frames,evaded,asr\n";
      for (const auto& p : r.postures) {
        std::cout << p.posture << ',' << (p.frames ? std::to_string(*p.frames) : "") << ','
                  << (p.evaded ? std::to_string(*p.evaded) : "") << ',' << fmt_double(p.asr) << '\n';
      }
      std::cout << "mean,,," << fmt_double(r.mean) << '\n';
    } else if (*ablate) {
      const RunConfig c = ab.resolve();
      const auto data = to_attack_set(load_dataset(c.dataset));
      const auto results = run_ablation(c, parse_ablation_kind(kind), grid, data, c.output_dir, &std::cerr);
      const auto failed = std::count_if(results.begin(), results.end(), [](const CellResult& r) { return !r.ok; });
      std::cout << results.size() << " cells, " << failed << " failed; wrote " << c.output_dir << "/sweep.csv\n";
    } else if (*make_data) {
      ToyDatasetOptions opt;
      opt.images = data_images;
      opt.seed = data_seed;
      std::cout << "wrote " << write_toy_dataset(data_dir, opt).string() << '\n';
    } else if (*config) {
      RunConfig c;
      apply_seed_override(c);
      if (config_out.empty()) {
        std::cout << to_json(c).dump(2) << '\n';
      } else {
        save_config(config_out, c);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
