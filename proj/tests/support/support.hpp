#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/diffusion/training.hpp"
#include "candleforge/diffusion/unet.hpp"
#include "candleforge/market_data.hpp"

namespace cftest {

// Repository fixture directory (tests/fixtures/market) baked in at configure time.
std::filesystem::path fixture_dir();
std::filesystem::path fixture_csv();

// Geometric random walk of closes starting at `start`.
std::vector<double> random_walk(std::uint64_t seed, std::size_t n, double start = 100.0, double vol = 0.02);

// Gapless 4h candles starting 2024-01-01 from the synthetic generator.
candleforge::CandleSeries gapless_series(std::size_t count, std::uint64_t seed = 11, double vol = 0.01);

// Window of 40 bars with fully defined overlays, drawn from a series whose price level,
// volatility and length vary with `seed`. Every fifth seed yields a flat (constant) series.
candleforge::ChartWindow random_window(std::uint64_t seed);

// Removes itself on destruction.
struct TempDir {
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path path;
};

// ---- gradient check -------------------------------------------------------------------------

// Smallest configuration with every layer type: stem, residual blocks with 1x1 skips,
// pooling, upsampling with skip concat, FiLM, cross-attention, output norm and head.
candleforge::diffusion::UNetConfig micro_unet();

struct GradCheckResult {
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<std::string> layers_checked;  // parameter names that received a nonzero gradient
};

// Central differences in double on a three-sample batch (conditioned, null text, null text
// and image). Relative error uses max(|analytic|, |numeric|, 1e-6) as the denominator.
GradCheckResult gradient_check(const candleforge::diffusion::UNetConfig& config, double h = 1e-4);

// ---- toy training -----------------------------------------------------------------------

struct ToyData {
  candleforge::diffusion::UNetConfig unet;
  std::vector<candleforge::diffusion::TrainingExample> examples;
};

// First `count` training pairs of the fixture rendered at 64x64 and encoded to 16x16 latents.
ToyData toy_data(std::size_t count = 64);

struct ToyRun {
  std::vector<double> losses;
  std::vector<std::uint8_t> checkpoint;
};

ToyRun toy_train(const ToyData& data, int steps, std::uint64_t seed, double learning_rate = 1e-3);

}  // namespace cftest

namespace cftest {

// ---- command line -----------------------------------------------------------------------

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

CommandResult run_command(const std::string& command);

// Small offline configuration: 64x64 charts, a short evaluation range and a tiny model.
// Paths point under `root`.
std::string e2e_config(const std::filesystem::path& root, int train_steps = 10, int sampler_steps = 2);

// dataset -> train -> generate -> evaluate with the CLI at `cli`. Returns the first failure.
CommandResult run_pipeline(const std::filesystem::path& cli, const std::filesystem::path& config);

// Relative paths of files that differ in content or exist on only one side.
std::vector<std::string> diff_trees(const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace cftest
