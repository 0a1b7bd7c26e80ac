#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "candleforge/config.hpp"
#include "candleforge/dataset.hpp"
#include "candleforge/diffusion/checkpoint.hpp"
#include "candleforge/diffusion/codec.hpp"
#include "candleforge/diffusion/training.hpp"
#include "candleforge/evaluation.hpp"
#include "candleforge/market_data.hpp"

namespace candleforge {

// Bars of history loaded before a prefetched range so the slow SMA is defined at its first bar.
std::size_t warmup_history_bars(const EnumerationOptions& options);

// `<data_dir>/<SYMBOL>_<interval>.csv`
std::filesystem::path cached_series_path(const RunConfig& config, const std::filesystem::path& data_dir);

// Candles with start <= open_time < end. Served from the cached CSV under paths.data_dir when
// it covers the range, otherwise fetched from the configured source.
CandleSeries load_range(const RunConfig& config, std::int64_t start, std::int64_t end, bool offline);

// Everything from the earliest range start (minus warm-up history) to the latest range end.
CandleSeries load_full_series(const RunConfig& config, bool offline);

struct FetchSummary {
  std::filesystem::path csv;
  std::size_t candles = 0;
  std::size_t missing_bars = 0;
};

FetchSummary run_fetch(const RunConfig& config, bool offline, const std::filesystem::path& data_dir);

// Enumerates and materializes one split. For a prefetched split `history_bars` leading bars of
// `series` are warm-up only.
Manifest build_split(const RunConfig& config, const CandleSeries& series, bool eval, std::size_t history_bars,
                     const std::filesystem::path& out_dir);

struct DatasetSummary {
  Manifest train;
  Manifest eval;
};

// Writes `<dataset_dir>/train` and `<dataset_dir>/eval`.
DatasetSummary run_dataset(const RunConfig& config, bool offline, const std::filesystem::path& dataset_dir);

// Encodes every record (or the first `max_examples`) into latents and condition features.
std::vector<diffusion::TrainingExample> load_examples(const Manifest& manifest, const diffusion::LatentCodec& codec,
                                                      const diffusion::ConditionConfig& condition,
                                                      std::size_t max_examples = 0);

struct TrainSummary {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<double> losses;
};

// Trains on `<dataset_dir>/train`, writes the checkpoint and `train_log.csv` next to it.
TrainSummary run_train(const RunConfig& config, const std::filesystem::path& dataset_dir,
                       const std::filesystem::path& checkpoint,
                       const std::function<void(const diffusion::StepRecord&)>& on_step = {});

// Input chart -> latent -> guided sampling conditioned on `prompt` -> decoded chart.
RgbImage generate_image(const diffusion::LoadedCheckpoint& checkpoint, const diffusion::LatentCodec& codec,
                        const RgbImage& input, const std::string& prompt, const diffusion::SamplerConfig& sampler);

// Per-window sampling seed derived from the root seed.
std::uint64_t sample_seed(std::uint64_t root, std::size_t n);

// Generates one image per manifest record into `out_dir`, named like the record's edited image.
std::vector<std::filesystem::path> run_generate_batch(const RunConfig& config, const diffusion::LoadedCheckpoint& ckpt,
                                                      const Manifest& manifest, const std::filesystem::path& out_dir);

struct WindowScenario {
  std::size_t n = 0;
  std::optional<double> rsi;   // override; default is the computed value at n
  std::optional<double> macd;
  std::uint64_t seed = 0;
};

struct WindowGeneration {
  std::string prompt;
  RgbImage input;
  RgbImage generated;
  TrendLabel predicted = TrendLabel::kFlat;
  std::optional<TrendLabel> ground_truth;
};

// Scenario generation for one window of `series`. Throws ArgumentError when n is not a
// renderable window or an override is out of range.
WindowGeneration generate_for_window(const RunConfig& config, const diffusion::LoadedCheckpoint& ckpt,
                                     const CandleSeries& series, const IndicatorFrame& frame,
                                     const WindowScenario& scenario, const diffusion::SamplerConfig& sampler);

EvaluationRun run_evaluate(const Manifest& eval, const std::filesystem::path& generated_dir,
                           const std::filesystem::path& out_dir);

}  // namespace candleforge
