#include "support.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cmath>
#include <random>

#include "candleforge/dataset.hpp"
#include "candleforge/diffusion/checkpoint.hpp"
#include "candleforge/diffusion/codec.hpp"
#include "candleforge/image.hpp"
#include "candleforge/rng.hpp"
#include "candleforge/time_util.hpp"

namespace fs = std::filesystem;
using namespace candleforge;
using namespace candleforge::diffusion;

namespace cftest {

fs::path fixture_dir() { return fs::path(CANDLEFORGE_TEST_FIXTURES) / "market"; }
fs::path fixture_csv() { return fixture_dir() / "BTCUSDT_4h.csv"; }

std::vector<double> random_walk(std::uint64_t seed, std::size_t n, double start, double vol) {
  Rng rng(seed);
  std::vector<double> out;
  out.reserve(n);
  double price = start;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(price);
    price *= std::exp(vol * rng.normal());
  }
  return out;
}

CandleSeries gapless_series(std::size_t count, std::uint64_t seed, double vol) {
  SyntheticSeriesOptions o;
  o.start = parse_timestamp("2024-01-01");
  o.count = count;
  o.seed = seed;
  o.bar_volatility = vol;
  return synthetic_series(o);
}

ChartWindow random_window(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "window"));
  const std::size_t count = 130 + rng.below(60);
  CandleSeries series;
  if (seed % 5 == 4) {
    const Decimal p = Decimal::from_double(10.0 + rng.uniform() * 1000.0, 2);
    std::vector<Candle> candles;
    for (std::size_t i = 0; i < count; ++i) {
      candles.push_back({static_cast<std::int64_t>(i) * kFourHoursMs, p, p, p, p, Decimal("1")});
    }
    series = CandleSeries("FLAT", kFourHoursMs, std::move(candles));
  } else {
    SyntheticSeriesOptions o;
    o.count = count;
    o.seed = seed;
    o.initial_price = std::pow(10.0, 0.5 + rng.uniform() * 4.5);
    o.bar_volatility = 0.001 + rng.uniform() * 0.05;
    series = synthetic_series(o);
  }
  const IndicatorFrame frame = indicator_frame(series);
  return make_window(series, frame, count - 1, kDefaultWindowLen);
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path = fs::temp_directory_path() /
         ("cftest-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
  fs::create_directories(path);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path, ec);
}

UNetConfig micro_unet() {
  UNetConfig c;
  c.base_channels = 2;
  c.levels = 2;
  c.groups = 2;
  c.time_dim = 4;
  c.embed_dim = 4;
  c.condition.dim = 4;
  c.cross_attention = true;
  c.attention_dim = 2;
  return c;
}

GradCheckResult gradient_check(const UNetConfig& config, double h) {
  Denoiser<double> model(config);
  model.initialize(7, InitMode::kDense);
  const int hw = 2 * config.spatial_multiple();
  Rng rng(3);
  std::vector<TrainingExample> examples(3);
  for (auto& e : examples) {
    e.input = Latent(4, hw, hw);
    e.edited = Latent(4, hw, hw);
    for (auto& v : e.input.data) v = static_cast<float>(rng.normal());
    for (auto& v : e.edited.data) v = static_cast<float>(rng.normal());
    e.features = condition_features(rng.uniform() * 100.0, rng.normal() * 500.0, config.condition);
  }
  const NoiseSchedule schedule = make_schedule();
  auto draws = draw_samples<double>(3, 4, hw, hw, schedule, GuidanceDropout{0, 0, 0}, rng);
  draws[1].drop_text = true;
  draws[2].drop_text = true;
  draws[2].drop_image = true;
  const std::vector<const TrainingExample*> batch{&examples[0], &examples[1], &examples[2]};

  std::vector<double> grad;
  training_loss(model, batch, draws, schedule, &grad);
  std::vector<double> numeric(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double original = model.params()[i];
    model.params()[i] = original + h;
    const double up = training_loss<double>(model, batch, draws, schedule, nullptr);
    model.params()[i] = original - h;
    const double down = training_loss<double>(model, batch, draws, schedule, nullptr);
    model.params()[i] = original;
    numeric[i] = (up - down) / (2.0 * h);
  }

  GradCheckResult result;
  result.parameters = grad.size();
  for (const ParamInfo& p : model.layout()) {
    bool touched = false;
    for (std::size_t i = p.offset; i < p.offset + p.size; ++i) {
      const double rel = std::abs(grad[i] - numeric[i]) / std::max({std::abs(grad[i]), std::abs(numeric[i]), 1e-6});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
      }
      touched = touched || std::abs(grad[i]) > 1e-8;
    }
    if (touched) result.layers_checked.push_back(p.name);
  }
  return result;
}

ToyData toy_data(std::size_t count) {
  const CandleSeries full = read_candles(fixture_csv(), {"BTCUSDT", kFourHoursMs});
  const CandleSeries train = full.slice(0, full.lower_bound(parse_timestamp("2025-03-01")));
  EnumerationOptions options;
  auto pairs = enumerate_pairs(train, options);
  pairs.resize(std::min(count, pairs.size()));

  const ChartStyle style = ChartStyle::for_size(64, 64);
  const LatentCodec codec;
  ToyData data;
  for (const auto& pair : pairs) {
    TrainingExample e;
    e.input = codec.encode(render_window(pair.input_window, std::nullopt, style).pixels);
    e.edited = codec.encode(render_window(pair.edited_window, pair.label, style).pixels);
    const PromptValues v = parse_prompt(pair.prompt);
    e.features = condition_features(v.rsi, v.macd, data.unet.condition);
    data.examples.push_back(std::move(e));
  }
  return data;
}

ToyRun toy_train(const ToyData& data, int steps, std::uint64_t seed, double learning_rate) {
  TrainOptions options;
  options.steps = steps;
  options.seed = seed;
  options.adam.learning_rate = learning_rate;
  ToyRun run;
  const NoiseSchedule schedule = make_schedule();
  const Denoiser<float> model = train_denoiser(data.unet, options, data.examples, schedule,
                                               [&](const StepRecord& r) { run.losses.push_back(r.loss); });
  CheckpointMeta meta;
  meta.unet = data.unet;
  meta.train_seed = seed;
  meta.train_steps = steps;
  run.checkpoint = serialize_checkpoint(model, meta);
  return run;
}

}  // namespace cftest

namespace cftest {

CommandResult run_command(const std::string& command) {
  CommandResult result;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return result;
  char buf[4096];
  std::size_t got = 0;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) result.output.append(buf, got);
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string e2e_config(const fs::path& root, int train_steps, int sampler_steps) {
  std::string text;
  text += "[run]\nseed = 2024\n";
  text += "[data]\neval_start = 2025-07-01\neval_end = 2025-08-01\nfixture_dir = " + fixture_dir().string() + "\n";
  text += "[style]\nwidth = 64\nheight = 64\n";
  text += "[model]\nbase_channels = 8\ngroups = 4\ntime_dim = 8\nembed_dim = 16\ncondition_dim = 8\n";
  text += "learning_rate = 0.001\nbatch_size = 4\nmax_examples = 16\ntrain_steps = " + std::to_string(train_steps) + "\n";
  text += "[sampler]\nsteps = " + std::to_string(sampler_steps) + "\n";
  text += "[paths]\ndata_dir = " + (root / "data").string() + "\ndataset_dir = " + (root / "dataset").string() +
          "\ncheckpoint = " + (root / "model" / "model.cfck").string() + "\nresults_dir = " +
          (root / "results").string() + "\n";
  return text;
}

CommandResult run_pipeline(const fs::path& cli, const fs::path& config) {
  CommandResult last;
  for (const char* cmd : {"fetch", "dataset", "train", "generate", "evaluate"}) {
    last = run_command(cli.string() + " " + cmd + " --offline --config " + config.string());
    if (last.exit_code != 0) {
      last.output = std::string(cmd) + ": " + last.output;
      return last;
    }
  }
  return last;
}

std::vector<std::string> diff_trees(const fs::path& a, const fs::path& b) {
  std::vector<std::string> out;
  const auto files = [](const fs::path& root) {
    std::vector<std::string> rel;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), root).string());
    }
    std::sort(rel.begin(), rel.end());
    return rel;
  };
  const auto fa = files(a), fb = files(b);
  std::set_symmetric_difference(fa.begin(), fa.end(), fb.begin(), fb.end(), std::back_inserter(out));
  for (const auto& rel : fa) {
    if (!std::binary_search(fb.begin(), fb.end(), rel)) continue;
    if (read_file_bytes(a / rel) != read_file_bytes(b / rel)) out.push_back(rel);
  }
  return out;
}

}  // namespace cftest
