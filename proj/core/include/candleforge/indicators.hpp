#pragma once

#include <optional>
#include <span>
#include <vector>

namespace candleforge {

class CandleSeries;

using IndicatorSeries = std::vector<std::optional<double>>;

struct IndicatorPeriods {
  int sma_fast = 5;
  int sma_slow = 90;
  int rsi = 14;
  int macd_fast = 12;
  int macd_slow = 26;
  int macd_signal = 9;
};

// Per-bar indicator values index-aligned to a series; std::nullopt during warm-up.
struct IndicatorFrame {
  IndicatorSeries sma5;
  IndicatorSeries sma90;
  IndicatorSeries rsi14;
  IndicatorSeries macd_line;
  IndicatorSeries macd_signal;
  IndicatorSeries macd_histogram;

  std::size_t size() const noexcept { return sma5.size(); }
  // Copies bars [first, last).
  IndicatorFrame slice(std::size_t first, std::size_t last) const;
};

struct MacdSeries {
  IndicatorSeries line;
  IndicatorSeries signal;
  IndicatorSeries histogram;
};

// Simple moving average; defined from index period-1. Throws ArgumentError for period 0.
IndicatorSeries sma(std::span<const double> closes, int period);

// Exponential moving average with multiplier 2/(period+1), seeded by the SMA at index period-1.
IndicatorSeries ema(std::span<const double> closes, int period);

// Wilder RSI. Seed averages are the simple mean of the first `period` deltas, so the first
// value lands at index `period`. Flat windows read 50, loss-free windows 100, gain-free 0.
IndicatorSeries rsi_wilder(std::span<const double> closes, int period = 14);

// MACD line = EMA(fast) - EMA(slow); signal = EMA(signal) of the line seeded by the SMA of its
// first `signal` defined values; histogram = line - signal.
MacdSeries macd(std::span<const double> closes, int fast = 12, int slow = 26, int signal = 9);

IndicatorFrame indicator_frame(const CandleSeries& series, const IndicatorPeriods& periods = {});

// First index at which each frame column is defined for the given periods.
struct WarmupBounds {
  int sma_fast;
  int sma_slow;
  int rsi;
  int macd_line;
  int macd_signal;
};
WarmupBounds warmup_bounds(const IndicatorPeriods& periods);

}  // namespace candleforge
