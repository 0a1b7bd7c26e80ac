#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "candleforge/config.hpp"
#include "candleforge/error.hpp"
#include "candleforge/pipeline.hpp"
#include "candleforge/service.hpp"
#include "candleforge/time_util.hpp"

namespace fs = std::filesystem;
using namespace candleforge;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool offline = false;
};

struct Overrides {
  std::optional<int> steps;
  std::optional<double> guidance;
  std::optional<double> image_guidance;
  std::string start;
  std::string end;
  std::optional<std::size_t> window;
  std::string time;
  std::optional<double> rsi;
  std::optional<double> macd;
  std::string generated;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (INI)");
  cmd->add_option("--seed", c.seed, "Root seed");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_flag("--offline", c.offline, "Use fixtures only");
}

RunConfig load(const Common& c) {
  RunConfig config = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.config.empty()) config.resolve_paths(fs::current_path());
  if (c.seed) config.seed = *c.seed;
  if (c.offline) config.data.mode = "fixture";
  return config;
}

fs::path out_or(const Common& c, const fs::path& fallback) { return c.out.empty() ? fallback : fs::path(c.out); }

int run(int argc, char** argv) {
  CLI::App app{"candleforge: candlestick chart forecasting with conditional latent diffusion"};
  app.require_subcommand(1);
  Common common;
  Overrides ov;

  auto* fetch = app.add_subcommand("fetch", "Download candles into the data directory");
  auto* dataset = app.add_subcommand("dataset", "Render training and evaluation pairs");
  auto* train = app.add_subcommand("train", "Train the denoiser");
  auto* generate = app.add_subcommand("generate", "Generate next-chart images");
  auto* evaluate = app.add_subcommand("evaluate", "Score generated images against ground truth");
  auto* serve = app.add_subcommand("serve", "Run the scenario HTTP service");
  for (auto* cmd : {fetch, dataset, train, generate, evaluate, serve}) add_common(cmd, common);

  for (auto* cmd : {fetch, dataset}) {
    cmd->add_option("--start", ov.start, "Training range start");
    cmd->add_option("--end", ov.end, "Training range end (exclusive)");
  }
  train->add_option("--steps", ov.steps, "Optimizer steps");
  for (auto* cmd : {generate, serve}) {
    cmd->add_option("--steps", ov.steps, "Sampler steps");
    cmd->add_option("--guidance", ov.guidance, "Text guidance scale");
    cmd->add_option("--image-guidance", ov.image_guidance, "Image guidance scale");
  }
  generate->add_option("--window", ov.window, "End index of a single window");
  generate->add_option("--time", ov.time, "Open time of a single window's last bar");
  generate->add_option("--rsi", ov.rsi, "RSI override for a single window");
  generate->add_option("--macd", ov.macd, "MACD override for a single window");
  evaluate->add_option("--generated", ov.generated, "Directory of generated images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    std::cerr << app.help();
    return 1;
  }

  RunConfig config = load(common);
  if (!ov.start.empty()) config.data.train_start = ov.start;
  if (!ov.end.empty()) config.data.train_end = ov.end;
  if (ov.steps) (train->parsed() ? config.model.train_steps : config.sampler.steps) = *ov.steps;
  if (ov.guidance) config.sampler.text_guidance = *ov.guidance;
  if (ov.image_guidance) config.sampler.image_guidance = *ov.image_guidance;
  config.validate();

  if (fetch->parsed()) {
    const auto s = run_fetch(config, common.offline, out_or(common, config.paths.data_dir));
    std::printf("%zu candles written to %s\n", s.candles, s.csv.string().c_str());
  } else if (dataset->parsed()) {
    const auto s = run_dataset(config, common.offline, out_or(common, config.paths.dataset_dir));
    std::printf("train pairs: %zu\neval pairs: %zu\n", s.train.records.size(), s.eval.records.size());
  } else if (train->parsed()) {
    const fs::path ckpt = common.out.empty() ? config.paths.checkpoint : fs::path(common.out) / "model.cfck";
    const auto s = run_train(config, config.paths.dataset_dir, ckpt, [](const diffusion::StepRecord& r) {
      if (r.step % 50 == 0) spdlog::info("step {} loss {:.5f}", r.step, r.loss);
    });
    std::printf("checkpoint: %s\nlog: %s\n", s.checkpoint.string().c_str(), s.log.string().c_str());
  } else if (generate->parsed()) {
    const auto ckpt = diffusion::load_checkpoint(config.paths.checkpoint);
    if (ov.window || !ov.time.empty()) {
      const CandleSeries series = load_full_series(config, common.offline);
      const IndicatorFrame frame = indicator_frame(series);
      std::size_t n = ov.window.value_or(0);
      if (!ov.time.empty()) {
        n = series.lower_bound(parse_timestamp(ov.time));
        if (n >= series.size() || series[n].open_time != parse_timestamp(ov.time)) {
          throw ArgumentError("no candle opens at " + ov.time);
        }
      }
      const WindowScenario scenario{n, ov.rsi, ov.macd, sample_seed(config.seed, n)};
      const auto g = generate_for_window(config, ckpt, series, frame, scenario, config.sampler_config(scenario.seed));
      const fs::path dir = out_or(common, config.paths.results_dir);
      fs::create_directories(dir);
      const fs::path path = dir / ("window_" + std::to_string(n) + ".png");
      write_png(g.generated, path);
      std::printf("prompt: %s\npredicted: %s\n", g.prompt.c_str(), std::string(color_name(g.predicted)).c_str());
      if (g.ground_truth) std::printf("ground truth: %s\n", std::string(color_name(*g.ground_truth)).c_str());
      std::printf("image: %s\n", path.string().c_str());
    } else {
      const Manifest eval = read_manifest(config.paths.dataset_dir / "eval");
      const auto written =
          run_generate_batch(config, ckpt, eval, out_or(common, config.paths.results_dir / "generated"));
      std::printf("%zu images generated\n", written.size());
    }
  } else if (evaluate->parsed()) {
    const Manifest eval = read_manifest(config.paths.dataset_dir / "eval");
    const fs::path generated = ov.generated.empty() ? config.paths.results_dir / "generated" : fs::path(ov.generated);
    const auto r = run_evaluate(eval, generated, out_or(common, config.paths.results_dir));
    std::printf("%s", r.report.format_table().c_str());
  } else if (serve->parsed()) {
    ScenarioService service(config, load_full_series(config, common.offline),
                            diffusion::load_checkpoint(config.paths.checkpoint));
    service.serve(config.service.bind, config.service.port);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
