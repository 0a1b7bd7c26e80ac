#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "candleforge/decimal.hpp"
#include "candleforge/time_util.hpp"

namespace candleforge {

inline constexpr std::int64_t kFourHoursMs = 4 * kMillisPerHour;

struct Candle {
  std::int64_t open_time = 0;  // ms since epoch, UTC
  Decimal open;
  Decimal high;
  Decimal low;
  Decimal close;
  Decimal volume;

  friend bool operator==(const Candle&, const Candle&) = default;
};

// Empty string when the candle is valid, otherwise a description of the first violation.
std::string candle_violation(const Candle& candle);

// Ordered bars for one symbol at a fixed interval. Open times are strictly increasing;
// gaps are permitted and reported by find_gaps.
class CandleSeries {
 public:
  CandleSeries() = default;

  // Throws ValidationError if any candle is invalid or open times are not strictly increasing.
  CandleSeries(std::string symbol, std::int64_t interval_ms, std::vector<Candle> candles);

  const std::string& symbol() const noexcept { return symbol_; }
  std::int64_t interval_ms() const noexcept { return interval_ms_; }
  const std::vector<Candle>& candles() const noexcept { return candles_; }
  std::size_t size() const noexcept { return candles_.size(); }
  bool empty() const noexcept { return candles_.empty(); }
  const Candle& operator[](std::size_t i) const { return candles_[i]; }

  std::vector<double> closes() const;
  std::vector<double> volumes() const;

  // Index of the first candle with open_time >= t (size() if none).
  std::size_t lower_bound(std::int64_t t) const;

  // Candles with first <= index < last, same symbol and interval.
  CandleSeries slice(std::size_t first, std::size_t last) const;

  bool gapless() const;

  friend bool operator==(const CandleSeries&, const CandleSeries&) = default;

 private:
  std::string symbol_;
  std::int64_t interval_ms_ = kFourHoursMs;
  std::vector<Candle> candles_;
};

struct Gap {
  std::int64_t expected_open_time;
  std::int64_t actual_open_time;

  friend bool operator==(const Gap&, const Gap&) = default;
};

struct GapReport {
  std::vector<Gap> gaps;

  bool empty() const noexcept { return gaps.empty(); }
  // Number of bars missing across all gaps.
  std::size_t missing_bars(std::int64_t interval_ms) const;
};

// One entry per consecutive pair whose delta differs from the interval.
// Throws ArgumentError on an empty series.
GapReport find_gaps(const CandleSeries& series);

// CSV with header `open_time,open,high,low,close,volume`, LF line endings. Decimal text is
// written verbatim so the file round-trips bit-exactly.
void write_candles(const CandleSeries& series, const std::filesystem::path& path);

struct SeriesInfo {
  std::string symbol;
  std::int64_t interval_ms = kFourHoursMs;
};

// Throws ParseError (1-based line number) on schema problems and ValidationError naming the
// row when a candle or the ordering is invalid.
CandleSeries read_candles(const std::filesystem::path& path, const SeriesInfo& info = {});

// ---- exchange access -------------------------------------------------------------------

enum class DataMode { kFixture, kLive };
enum class MarketKind { kFutures, kSpot };

struct KlinesQuery {
  std::string symbol;
  std::string interval;  // exchange notation, e.g. "4h"
  std::int64_t start_time = 0;
  std::int64_t end_time = 0;  // inclusive, as the exchange expects
  int limit = 1000;
};

// Returns the raw response body of one klines page request.
class KlinesTransport {
 public:
  virtual ~KlinesTransport() = default;
  virtual std::string get_klines(const KlinesQuery& query) = 0;
};

// HTTP(S) GET against `<base_url><route>?symbol=..&interval=..&startTime=..&endTime=..&limit=..`.
class HttpKlinesTransport final : public KlinesTransport {
 public:
  HttpKlinesTransport(std::string base_url, std::string route,
                      std::chrono::milliseconds timeout = std::chrono::seconds(10));
  std::string get_klines(const KlinesQuery& query) override;

 private:
  std::string base_url_;
  std::string route_;
  std::chrono::milliseconds timeout_;
};

// Answers page requests from `<dir>/<SYMBOL>_<interval>.csv`, emitting the same JSON
// payload shape as the exchange. Used for deterministic offline runs.
class FixtureKlinesTransport final : public KlinesTransport {
 public:
  explicit FixtureKlinesTransport(std::filesystem::path dir);
  std::string get_klines(const KlinesQuery& query) override;

  static std::filesystem::path fixture_file(const std::filesystem::path& dir, const std::string& symbol,
                                            const std::string& interval);

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, CandleSeries>> loaded_;
};

// Serializes candles with open_time in [start, end] the way the exchange does
// (array of arrays, prices as strings, trailing fields present), at most `limit` rows.
std::string klines_payload(const CandleSeries& series, std::int64_t start, std::int64_t end_inclusive,
                           int limit);

// Parses an exchange klines payload. Syntax errors report the byte offset.
std::vector<Candle> parse_klines_payload(std::string_view body);

struct DataSourceConfig {
  DataMode mode = DataMode::kFixture;
  MarketKind market = MarketKind::kFutures;
  std::filesystem::path fixture_dir;
  std::string api_base;  // empty: exchange default for `market`
  int page_limit = 1000;
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{250};

  // Applies CANDLEFORGE_DATA_MODE, CANDLEFORGE_FIXTURE_DIR and CANDLEFORGE_API_BASE on top of
  // `base`.
  static DataSourceConfig from_env(DataSourceConfig base);
  static DataSourceConfig from_env();

  std::string default_base_url() const;
  std::string klines_route() const;
};

// Builds the transport selected by `config`. Fixture mode without a directory is a ConfigError.
std::unique_ptr<KlinesTransport> make_transport(const DataSourceConfig& config);

// All candles with start <= open_time < end, fetched page by page (cursor by time).
// The result is sorted and deduplicated regardless of page boundaries.
CandleSeries fetch_klines(const std::string& symbol, std::int64_t interval_ms, std::int64_t start,
                          std::int64_t end, KlinesTransport& transport, const DataSourceConfig& config = {});

CandleSeries fetch_klines(const std::string& symbol, std::int64_t interval_ms, std::int64_t start,
                          std::int64_t end, const DataSourceConfig& config);

// Deterministic geometric random walk used to build offline fixtures.
struct SyntheticSeriesOptions {
  std::string symbol = "BTCUSDT";
  std::int64_t interval_ms = kFourHoursMs;
  std::int64_t start = 0;
  std::size_t count = 0;
  double initial_price = 42000.0;
  double bar_volatility = 0.008;
  std::uint64_t seed = 2024;
};

CandleSeries synthetic_series(const SyntheticSeriesOptions& options);

}  // namespace candleforge
