#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/indicators.hpp"
#include "candleforge/market_data.hpp"
#include "candleforge/trend_label.hpp"

namespace candleforge {

inline constexpr double kDefaultThreshold = 0.02;
inline constexpr std::size_t kDefaultLookahead = 3;

// r = close_n3 / close_n - 1; Up when r > threshold, Down when r < -threshold, Flat otherwise.
// Comparison is exact on the decimal text. Throws ArgumentError for close_n <= 0.
TrendLabel label_from_prices(const Decimal& close_n, const Decimal& close_n3, double threshold = kDefaultThreshold);
TrendLabel label_from_prices(double close_n, double close_n3, double threshold = kDefaultThreshold);

// "Predict next candle, RSI is 55.30, MACD is 120.50"; values rounded half away from zero
// to two places. Throws ArgumentError when rsi is outside [0, 100].
std::string format_prompt(double rsi, double macd);

struct PromptValues {
  double rsi = 0.0;
  double macd = 0.0;
};

// Inverse of format_prompt. Throws ParseError when the text does not match the template.
PromptValues parse_prompt(std::string_view prompt);

// Half-away-from-zero rounding to hundredths, as used by the prompt template.
double round2(double value);

enum class WarmupMode {
  kInSample,    // indicators warm up on the first bars of the series itself
  kPrefetched,  // bars before `range_start` are history supplied only for warm-up
};

struct EnumerationOptions {
  std::size_t window_len = kDefaultWindowLen;
  std::size_t lookahead = kDefaultLookahead;
  WarmupMode warmup = WarmupMode::kInSample;
  // First index of the enumerated range (prefetched mode only; in-sample always starts at 0).
  std::size_t range_start = 0;
  // Treat the series as contiguous instead of skipping windows that straddle a gap.
  bool bridge_gaps = false;
  double threshold = kDefaultThreshold;
  IndicatorPeriods periods;
};

struct TrainingPairSpec {
  std::size_t n = 0;
  std::int64_t open_time_n = 0;
  ChartWindow input_window;
  ChartWindow edited_window;
  TrendLabel label = TrendLabel::kFlat;
  std::string prompt;
  Decimal close_n;
  Decimal close_n3;
};

// Global end indices n of every valid pair, ascending. A pair is valid when the input window
// lies inside the range with SMA(slow) defined at its first bar, n + lookahead is in the series,
// the prompt indicators are defined at n, and (unless bridging) no gap falls inside
// [n - window_len + 1, n + lookahead].
std::vector<std::size_t> enumerate_pair_indices(const CandleSeries& series, const IndicatorFrame& frame,
                                                const EnumerationOptions& options);

std::vector<TrainingPairSpec> enumerate_pairs(const CandleSeries& series, const EnumerationOptions& options);
std::vector<TrainingPairSpec> enumerate_pairs(const CandleSeries& series, const IndicatorFrame& frame,
                                              const EnumerationOptions& options);

// Closed-form pair count for a gapless range of `range_len` bars:
// in-sample: T - lookahead - window_len - (sma_slow - 1) + 1; prefetched: T - lookahead - window_len + 1.
std::size_t expected_pair_count(std::size_t range_len, const EnumerationOptions& options);

// Builds a single pair for end index n without any range checks beyond window fit.
TrainingPairSpec make_pair(const CandleSeries& series, const IndicatorFrame& frame, std::size_t n,
                           const EnumerationOptions& options);

// ---- manifest -----------------------------------------------------------------------------

struct ManifestRecord {
  std::size_t n = 0;
  std::int64_t open_time_n = 0;
  std::string input_path;   // relative to the manifest directory
  std::string edited_path;  // relative to the manifest directory
  std::string prompt;
  TrendLabel label = TrendLabel::kFlat;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct ManifestMetadata {
  std::string symbol;
  std::string interval;
  std::size_t window_len = kDefaultWindowLen;
  std::size_t lookahead = kDefaultLookahead;
  double threshold = kDefaultThreshold;
  std::string warmup = "in_sample";
  std::string style_hash;
  ChartStyle style;
  std::size_t record_count = 0;

  friend bool operator==(const ManifestMetadata&, const ManifestMetadata&) = default;
};

struct Manifest {
  std::filesystem::path directory;
  ManifestMetadata metadata;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const std::string& relative) const { return directory / relative; }
};

inline constexpr std::string_view kManifestFile = "manifest.jsonl";
inline constexpr std::string_view kManifestMetaFile = "manifest.meta.json";

// Writes manifest.jsonl (one record per line) and manifest.meta.json into `directory`.
void write_manifest(const Manifest& manifest, const std::filesystem::path& directory);
// Accepts either the dataset directory or the path of manifest.jsonl.
Manifest read_manifest(const std::filesystem::path& path);

// Renders every pair (input without marker, edited with its label's marker) under
// `out_dir/images/` and writes the manifest. Output is staged and swapped in only on success,
// so a failure leaves no partial files and reruns are byte-identical.
Manifest materialize(const std::vector<TrainingPairSpec>& pairs, const ChartStyle& style,
                     const std::filesystem::path& out_dir, ManifestMetadata metadata);

}  // namespace candleforge
