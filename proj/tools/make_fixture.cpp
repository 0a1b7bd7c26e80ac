// Writes the deterministic synthetic candle fixture used by offline runs and tests.
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "candleforge/market_data.hpp"
#include "candleforge/time_util.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic OHLCV fixture"};
  std::string symbol = "BTCUSDT", interval = "4h", start = "2024-01-01", end = "2025-08-01", out;
  std::uint64_t seed = 2024;
  double price = 42000.0, vol = 0.008;
  app.add_option("--symbol", symbol);
  app.add_option("--interval", interval);
  app.add_option("--start", start);
  app.add_option("--end", end, "exclusive");
  app.add_option("--seed", seed);
  app.add_option("--price", price);
  app.add_option("--volatility", vol);
  app.add_option("--out", out, "Output CSV")->required();
  CLI11_PARSE(app, argc, argv);
  try {
    candleforge::SyntheticSeriesOptions o;
    o.symbol = symbol;
    o.interval_ms = candleforge::parse_interval(interval);
    o.start = candleforge::parse_timestamp(start);
    const std::int64_t stop = candleforge::parse_timestamp(end);
    o.count = static_cast<std::size_t>((stop - o.start) / o.interval_ms);
    o.initial_price = price;
    o.bar_volatility = vol;
    o.seed = seed;
    const auto series = candleforge::synthetic_series(o);
    candleforge::write_candles(series, out);
    std::printf("%zu candles -> %s\n", series.size(), out.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
