#include "candleforge/indicators.hpp"

#include "candleforge/error.hpp"
#include "candleforge/market_data.hpp"

namespace candleforge {
namespace {

void require_period(int period, const char* name) {
  if (period < 1) throw ArgumentError(std::string(name) + " period must be >= 1");
}

IndicatorSeries slice_series(const IndicatorSeries& s, std::size_t first, std::size_t last) {
  return IndicatorSeries(s.begin() + static_cast<std::ptrdiff_t>(first), s.begin() + static_cast<std::ptrdiff_t>(last));
}

}  // namespace

IndicatorFrame IndicatorFrame::slice(std::size_t first, std::size_t last) const {
  return {slice_series(sma5, first, last),        slice_series(sma90, first, last),
          slice_series(rsi14, first, last),       slice_series(macd_line, first, last),
          slice_series(macd_signal, first, last), slice_series(macd_histogram, first, last)};
}

IndicatorSeries sma(std::span<const double> closes, int period) {
  require_period(period, "SMA");
  IndicatorSeries out(closes.size());
  const auto p = static_cast<std::size_t>(period);
  // Each window is summed directly; a running sum drifts and breaks scale equivariance.
  for (std::size_t i = p - 1; i < closes.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = i + 1 - p; j <= i; ++j) sum += closes[j];
    out[i] = sum / static_cast<double>(period);
  }
  return out;
}

IndicatorSeries ema(std::span<const double> closes, int period) {
  require_period(period, "EMA");
  IndicatorSeries out(closes.size());
  const auto p = static_cast<std::size_t>(period);
  if (closes.size() < p) return out;
  double value = 0.0;
  for (std::size_t j = 0; j < p; ++j) value += closes[j];
  value /= static_cast<double>(period);
  out[p - 1] = value;
  const double k = 2.0 / (static_cast<double>(period) + 1.0);
  for (std::size_t i = p; i < closes.size(); ++i) {
    value = closes[i] * k + value * (1.0 - k);
    out[i] = value;
  }
  return out;
}

IndicatorSeries rsi_wilder(std::span<const double> closes, int period) {
  require_period(period, "RSI");
  IndicatorSeries out(closes.size());
  const auto p = static_cast<std::size_t>(period);
  if (closes.size() < p + 1) return out;

  const auto rsi_from = [](double avg_gain, double avg_loss) {
    if (avg_loss == 0.0) return avg_gain == 0.0 ? 50.0 : 100.0;
    if (avg_gain == 0.0) return 0.0;
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss);
  };

  double gain = 0.0;
  double loss = 0.0;
  for (std::size_t i = 1; i <= p; ++i) {
    const double delta = closes[i] - closes[i - 1];
    if (delta > 0.0) gain += delta; else loss -= delta;
  }
  gain /= static_cast<double>(period);
  loss /= static_cast<double>(period);
  out[p] = rsi_from(gain, loss);

  const double keep = static_cast<double>(period - 1);
  for (std::size_t i = p + 1; i < closes.size(); ++i) {
    const double delta = closes[i] - closes[i - 1];
    gain = (gain * keep + (delta > 0.0 ? delta : 0.0)) / static_cast<double>(period);
    loss = (loss * keep + (delta < 0.0 ? -delta : 0.0)) / static_cast<double>(period);
    out[i] = rsi_from(gain, loss);
  }
  return out;
}

MacdSeries macd(std::span<const double> closes, int fast, int slow, int signal) {
  require_period(fast, "MACD fast");
  require_period(slow, "MACD slow");
  require_period(signal, "MACD signal");
  if (fast >= slow) throw ArgumentError("MACD requires fast < slow");

  const IndicatorSeries fast_ema = ema(closes, fast);
  const IndicatorSeries slow_ema = ema(closes, slow);
  MacdSeries out{IndicatorSeries(closes.size()), IndicatorSeries(closes.size()), IndicatorSeries(closes.size())};

  std::vector<double> defined_line;
  std::size_t first_line = closes.size();
  for (std::size_t i = 0; i < closes.size(); ++i) {
    if (fast_ema[i] && slow_ema[i]) {
      out.line[i] = *fast_ema[i] - *slow_ema[i];
      if (first_line == closes.size()) first_line = i;
      defined_line.push_back(*out.line[i]);
    }
  }
  const IndicatorSeries signal_ema = ema(defined_line, signal);
  for (std::size_t j = 0; j < signal_ema.size(); ++j) {
    if (!signal_ema[j]) continue;
    const std::size_t i = first_line + j;
    out.signal[i] = signal_ema[j];
    out.histogram[i] = *out.line[i] - *signal_ema[j];
  }
  return out;
}

IndicatorFrame indicator_frame(const CandleSeries& series, const IndicatorPeriods& periods) {
  const std::vector<double> closes = series.closes();
  MacdSeries m = macd(closes, periods.macd_fast, periods.macd_slow, periods.macd_signal);
  return {sma(closes, periods.sma_fast),   sma(closes, periods.sma_slow), rsi_wilder(closes, periods.rsi),
          std::move(m.line),               std::move(m.signal),           std::move(m.histogram)};
}

WarmupBounds warmup_bounds(const IndicatorPeriods& p) {
  return {p.sma_fast - 1, p.sma_slow - 1, p.rsi, p.macd_slow - 1, p.macd_slow - 1 + p.macd_signal - 1};
}

}  // namespace candleforge
