#include "candleforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <spdlog/spdlog.h>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/diffusion/sampler.hpp"
#include "candleforge/error.hpp"
#include "candleforge/image.hpp"
#include "candleforge/indicators.hpp"
#include "candleforge/time_util.hpp"

namespace candleforge {
namespace fs = std::filesystem;

namespace {

std::int64_t ts(const std::string& text) { return parse_timestamp(text); }

ManifestMetadata metadata_for(const RunConfig& config, bool eval) {
  ManifestMetadata m;
  m.symbol = config.data.symbol;
  m.interval = config.data.interval;
  m.window_len = config.dataset.window_len;
  m.lookahead = config.dataset.lookahead;
  m.threshold = config.dataset.threshold;
  m.warmup = eval ? config.dataset.eval_warmup : config.dataset.train_warmup;
  return m;
}

diffusion::CheckpointMeta checkpoint_meta(const RunConfig& config) {
  diffusion::CheckpointMeta meta;
  meta.unet = config.model.unet;
  meta.schedule_steps = config.model.schedule_steps;
  meta.beta_start = config.model.beta_start;
  meta.beta_end = config.model.beta_end;
  meta.codec_seed = config.model.codec_seed;
  meta.image_width = config.style.width;
  meta.image_height = config.style.height;
  meta.train_seed = config.seed;
  meta.train_steps = config.model.train_steps;
  return meta;
}

}  // namespace

std::size_t warmup_history_bars(const EnumerationOptions& options) {
  return static_cast<std::size_t>(std::max(warmup_bounds(options.periods).sma_slow, 0));
}

fs::path cached_series_path(const RunConfig& config, const fs::path& data_dir) {
  return FixtureKlinesTransport::fixture_file(data_dir, config.data.symbol, config.data.interval);
}

CandleSeries load_range(const RunConfig& config, std::int64_t start, std::int64_t end, bool offline) {
  if (start >= end) throw ArgumentError("empty time range");
  const std::int64_t interval = config.interval_ms();
  const fs::path cached = cached_series_path(config, config.paths.data_dir);
  if (fs::exists(cached)) {
    const CandleSeries all = read_candles(cached, {config.data.symbol, interval});
    if (!all.empty() && all[0].open_time <= start && all.candles().back().open_time + interval >= end) {
      return all.slice(all.lower_bound(start), all.lower_bound(end));
    }
    spdlog::info("cached series {} does not cover the range; fetching", cached.string());
  }
  return fetch_klines(config.data.symbol, interval, start, end, config.data_source(offline));
}

CandleSeries load_full_series(const RunConfig& config, bool offline) {
  const std::int64_t interval = config.interval_ms();
  const auto history = static_cast<std::int64_t>(warmup_history_bars(config.enumeration(true)));
  const std::int64_t start = std::min(ts(config.data.train_start), ts(config.data.eval_start) - history * interval);
  const std::int64_t end = std::max(ts(config.data.train_end), ts(config.data.eval_end));
  return load_range(config, start, end, offline);
}

FetchSummary run_fetch(const RunConfig& config, bool offline, const fs::path& data_dir) {
  const std::int64_t interval = config.interval_ms();
  const auto history = static_cast<std::int64_t>(warmup_history_bars(config.enumeration(true)));
  const std::int64_t start = std::min(ts(config.data.train_start), ts(config.data.eval_start) - history * interval);
  const std::int64_t end = std::max(ts(config.data.train_end), ts(config.data.eval_end));
  const CandleSeries series = fetch_klines(config.data.symbol, interval, start, end, config.data_source(offline));
  FetchSummary summary;
  summary.csv = cached_series_path(config, data_dir);
  fs::create_directories(data_dir);
  write_candles(series, summary.csv);
  summary.candles = series.size();
  if (!series.empty()) summary.missing_bars = find_gaps(series).missing_bars(interval);
  spdlog::info("fetched {} candles into {} ({} missing bars)", summary.candles, summary.csv.string(),
               summary.missing_bars);
  return summary;
}

Manifest build_split(const RunConfig& config, const CandleSeries& series, bool eval, std::size_t history_bars,
                     const fs::path& out_dir) {
  EnumerationOptions options = config.enumeration(eval);
  options.range_start = options.warmup == WarmupMode::kPrefetched ? history_bars : 0;
  const auto pairs = enumerate_pairs(series, options);
  spdlog::info("{} split: {} candles, {} pairs", eval ? "eval" : "train", series.size(), pairs.size());
  return materialize(pairs, config.style, out_dir, metadata_for(config, eval));
}

DatasetSummary run_dataset(const RunConfig& config, bool offline, const fs::path& dataset_dir) {
  const std::int64_t interval = config.interval_ms();
  DatasetSummary summary;

  const bool train_prefetched = config.dataset.train_warmup == "prefetched";
  const std::size_t train_history = train_prefetched ? warmup_history_bars(config.enumeration(false)) : 0;
  const CandleSeries train = load_range(
      config, ts(config.data.train_start) - static_cast<std::int64_t>(train_history) * interval,
      ts(config.data.train_end), offline);
  summary.train = build_split(config, train, false, train_history, dataset_dir / "train");

  const bool eval_prefetched = config.dataset.eval_warmup == "prefetched";
  const std::size_t eval_history = eval_prefetched ? warmup_history_bars(config.enumeration(true)) : 0;
  const CandleSeries eval = load_range(
      config, ts(config.data.eval_start) - static_cast<std::int64_t>(eval_history) * interval,
      ts(config.data.eval_end), offline);
  const std::size_t available = eval.lower_bound(ts(config.data.eval_start));
  summary.eval = build_split(config, eval, true, std::min(available, eval_history), dataset_dir / "eval");
  return summary;
}

std::vector<diffusion::TrainingExample> load_examples(const Manifest& manifest, const diffusion::LatentCodec& codec,
                                                      const diffusion::ConditionConfig& condition,
                                                      std::size_t max_examples) {
  const std::size_t count =
      max_examples == 0 ? manifest.records.size() : std::min(max_examples, manifest.records.size());
  std::vector<diffusion::TrainingExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const ManifestRecord& r = manifest.records[i];
    diffusion::TrainingExample ex;
    ex.input = codec.encode(read_png(manifest.resolve(r.input_path)));
    ex.edited = codec.encode(read_png(manifest.resolve(r.edited_path)));
    const PromptValues values = parse_prompt(r.prompt);
    ex.features = diffusion::condition_features(values.rsi, values.macd, condition);
    out.push_back(std::move(ex));
  }
  return out;
}

TrainSummary run_train(const RunConfig& config, const fs::path& dataset_dir, const fs::path& checkpoint,
                       const std::function<void(const diffusion::StepRecord&)>& on_step) {
  const Manifest manifest = read_manifest(dataset_dir / "train");
  if (!(manifest.metadata.style == config.style)) {
    throw ConfigError("dataset was rendered with a different chart style than the config");
  }
  const diffusion::LatentCodec codec(config.model.unet.out_channels, config.model.codec_seed);
  const auto examples = load_examples(manifest, codec, config.model.unet.condition, config.model.max_examples);
  if (examples.empty()) throw ValidationError("training manifest has no records");
  spdlog::info("training on {} examples for {} steps", examples.size(), config.model.train_steps);

  diffusion::TrainOptions options;
  options.steps = config.model.train_steps;
  options.batch_size = config.model.batch_size;
  options.adam = config.model.adam;
  options.dropout = config.model.dropout;
  options.seed = derive_seed(config.seed, "train");

  TrainSummary summary;
  summary.checkpoint = checkpoint;
  summary.log = checkpoint.parent_path() / "train_log.csv";
  if (!checkpoint.parent_path().empty()) fs::create_directories(checkpoint.parent_path());

  std::string log = "step,loss,lr,seed\n";
  const auto model = diffusion::train_denoiser(
      config.model.unet, options, examples, config.schedule(), [&](const diffusion::StepRecord& r) {
        summary.losses.push_back(r.loss);
        char line[128];
        std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%llu\n", r.step, r.loss, r.learning_rate,
                      static_cast<unsigned long long>(config.seed));
        log += line;
        if (on_step) on_step(r);
      });
  diffusion::save_checkpoint(model, checkpoint_meta(config), checkpoint);
  write_file_bytes(summary.log, {reinterpret_cast<const std::uint8_t*>(log.data()), log.size()});
  spdlog::info("wrote {} and {}", checkpoint.string(), summary.log.string());
  return summary;
}

RgbImage generate_image(const diffusion::LoadedCheckpoint& checkpoint, const diffusion::LatentCodec& codec,
                        const RgbImage& input, const std::string& prompt, const diffusion::SamplerConfig& sampler) {
  if (input.width() != checkpoint.meta.image_width || input.height() != checkpoint.meta.image_height) {
    throw ArgumentError("input chart is " + std::to_string(input.width()) + "x" + std::to_string(input.height()) +
                        " but the model was trained on " + std::to_string(checkpoint.meta.image_width) + "x" +
                        std::to_string(checkpoint.meta.image_height));
  }
  const auto schedule =
      diffusion::make_schedule(checkpoint.meta.schedule_steps, checkpoint.meta.beta_start, checkpoint.meta.beta_end);
  const diffusion::Latent latent = codec.encode(input);
  const diffusion::Conditioning cond = diffusion::embed_condition(prompt, false, checkpoint.model);
  return codec.decode(diffusion::sample(checkpoint.model, latent, cond, sampler, schedule));
}

std::uint64_t sample_seed(std::uint64_t root, std::size_t n) {
  return derive_seed(root, "sample/" + std::to_string(n));
}

std::vector<fs::path> run_generate_batch(const RunConfig& config, const diffusion::LoadedCheckpoint& ckpt,
                                         const Manifest& manifest, const fs::path& out_dir) {
  const diffusion::LatentCodec codec(ckpt.model.config().out_channels, ckpt.meta.codec_seed);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const ManifestRecord& r : manifest.records) {
    const RgbImage input = read_png(manifest.resolve(r.input_path));
    const RgbImage image = generate_image(ckpt, codec, input, r.prompt, config.sampler_config(sample_seed(config.seed, r.n)));
    const fs::path path = generated_image_path(out_dir, r);
    write_png(image, path);
    written.push_back(path);
  }
  spdlog::info("generated {} images into {}", written.size(), out_dir.string());
  return written;
}

WindowGeneration generate_for_window(const RunConfig& config, const diffusion::LoadedCheckpoint& ckpt,
                                     const CandleSeries& series, const IndicatorFrame& frame,
                                     const WindowScenario& scenario, const diffusion::SamplerConfig& sampler) {
  EnumerationOptions window_opts = config.enumeration(false);
  window_opts.lookahead = 0;
  window_opts.warmup = WarmupMode::kInSample;
  const auto windows = enumerate_pair_indices(series, frame, window_opts);
  if (!std::binary_search(windows.begin(), windows.end(), scenario.n)) {
    throw ArgumentError("window " + std::to_string(scenario.n) + " is not available");
  }
  const std::size_t n = scenario.n;
  const double rsi = scenario.rsi.value_or(*frame.rsi14[n]);
  const double macd = scenario.macd.value_or(*frame.macd_line[n]);
  if (!std::isfinite(rsi) || rsi < 0.0 || rsi > 100.0) throw ArgumentError("rsi override must lie in [0, 100]");
  if (!std::isfinite(macd)) throw ArgumentError("macd override must be finite");

  WindowGeneration out;
  out.prompt = format_prompt(rsi, macd);
  out.input = render_window(make_window(series, frame, n, config.dataset.window_len), std::nullopt, config.style).pixels;
  const diffusion::LatentCodec codec(ckpt.model.config().out_channels, ckpt.meta.codec_seed);
  out.generated = generate_image(ckpt, codec, out.input, out.prompt, sampler);
  out.predicted = classify_mark(read_mark(out.generated, config.style), config.style.palette);

  const std::size_t ahead = n + config.dataset.lookahead;
  if (ahead < series.size() &&
      (config.dataset.bridge_gaps ||
       series[ahead].open_time - series[n].open_time ==
           static_cast<std::int64_t>(config.dataset.lookahead) * series.interval_ms())) {
    out.ground_truth = label_from_prices(series[n].close, series[ahead].close, config.dataset.threshold);
  }
  return out;
}

EvaluationRun run_evaluate(const Manifest& eval, const fs::path& generated_dir, const fs::path& out_dir) {
  EvaluationRun run = evaluate_run(eval, generated_dir, eval.metadata.style);
  write_evaluation(run, out_dir);
  spdlog::info("accuracy {:.2f}% ({}/{})", run.report.accuracy(), run.report.correct, run.report.total);
  return run;
}

}  // namespace candleforge
