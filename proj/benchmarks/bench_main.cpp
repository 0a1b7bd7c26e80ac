#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/diffusion/codec.hpp"
#include "candleforge/diffusion/sampler.hpp"
#include "candleforge/diffusion/schedule.hpp"
#include "candleforge/diffusion/unet.hpp"
#include "candleforge/indicators.hpp"
#include "candleforge/market_data.hpp"

using namespace candleforge;
using namespace candleforge::diffusion;

namespace {

CandleSeries bench_series(std::size_t count) {
  SyntheticSeriesOptions o;
  o.start = 1704067200000;  // 2024-01-01
  o.count = count;
  return synthetic_series(o);
}

Tensor<float> random_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> n;
  Tensor<float> t(c, h, w);
  for (auto& v : t.data) v = n(gen);
  return t;
}

Denoiser<float> bench_model() {
  Denoiser<float> model(UNetConfig{});
  model.initialize(1);
  return model;
}

void BM_IndicatorFrame(benchmark::State& state) {
  const auto series = bench_series(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(indicator_frame(series));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_IndicatorFrame)->Arg(500)->Arg(3468);

void BM_RenderWindow(benchmark::State& state) {
  const auto series = bench_series(200);
  const auto frame = indicator_frame(series);
  const auto window = make_window(series, frame, series.size() - 1);
  const auto style = ChartStyle::for_size(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(render_window(window, TrendLabel::kDown, style));
}
BENCHMARK(BM_RenderWindow)->Arg(64)->Arg(256);

void BM_CodecEncode(benchmark::State& state) {
  const auto series = bench_series(200);
  const auto frame = indicator_frame(series);
  const auto image = render_window(make_window(series, frame, series.size() - 1), std::nullopt,
                                   ChartStyle::for_size(256, 256))
                         .pixels;
  const LatentCodec codec;
  for (auto _ : state) benchmark::DoNotOptimize(codec.encode(image));
}
BENCHMARK(BM_CodecEncode);

// latent side 16 for 64x64 charts, 64 for 256x256
void BM_DenoiserForward(benchmark::State& state) {
  const auto model = bench_model();
  const int hw = static_cast<int>(state.range(0));
  const auto x = random_tensor(8, hw, hw, 2);
  const Conditioning cond{condition_features(55.0, 12.0, model.config().condition)};
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, 500.0, cond));
}
BENCHMARK(BM_DenoiserForward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_DenoiserForwardBackward(benchmark::State& state) {
  const auto model = bench_model();
  const int hw = static_cast<int>(state.range(0));
  const auto x = random_tensor(8, hw, hw, 2);
  const auto grad_out = random_tensor(4, hw, hw, 3);
  const Conditioning cond{condition_features(55.0, 12.0, model.config().condition)};
  std::vector<float> grad(model.parameter_count());
  for (auto _ : state) {
    ForwardCache<float> cache;
    benchmark::DoNotOptimize(model.forward(x, 500.0, cond, cache));
    model.backward(cache, grad_out, grad);
  }
}
BENCHMARK(BM_DenoiserForwardBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

// One sampler step. Default scales (s_I = 1) need only the image and full branches.
void BM_SamplerStep(benchmark::State& state) {
  const auto model = bench_model();
  const auto schedule = make_schedule();
  const int hw = static_cast<int>(state.range(0));
  const auto input = random_tensor(4, hw, hw, 4);
  const Conditioning cond{condition_features(55.0, 12.0, model.config().condition)};
  SamplerConfig config;
  config.steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(sample(model, input, cond, config, schedule));
}
BENCHMARK(BM_SamplerStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
