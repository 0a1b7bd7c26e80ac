#include "candleforge/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "candleforge/error.hpp"
#include "candleforge/rng.hpp"

#include "httplib.h"

namespace candleforge {
namespace {

constexpr std::string_view kCsvHeader = "open_time,open,high,low,close,volume";

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return fields;
}

// Byte offset of the `index`-th element of the top-level JSON array in `body`,
// or 0 if it cannot be located.
std::size_t element_offset(std::string_view body, std::size_t index) {
  int depth = 0;
  bool in_string = false;
  std::size_t element = 0;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '[':
      case '{':
        ++depth;
        if (depth == 2 && element == index) return i;
        break;
      case ']':
      case '}': --depth; break;
      case ',':
        if (depth == 1) ++element;
        break;
      default: break;
    }
  }
  return 0;
}

Decimal decimal_field(const nlohmann::json& value, std::string_view body, std::size_t row, const char* name) {
  std::string text;
  if (value.is_string()) {
    text = value.get<std::string>();
  } else if (value.is_number()) {
    text = value.dump();
  } else {
    throw ParseError("klines payload row " + std::to_string(row) + ": field '" + name + "' is not a decimal",
                     element_offset(body, row));
  }
  if (!Decimal::is_valid(text)) {
    throw ParseError("klines payload row " + std::to_string(row) + ": field '" + name + "' has invalid decimal '" +
                         text + "'",
                     element_offset(body, row));
  }
  return Decimal(text);
}

template <typename Fn>
auto with_retries(const DataSourceConfig& config, Fn&& fn) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (attempt >= config.max_retries) throw;
      std::this_thread::sleep_for(config.retry_backoff * (1 << attempt));
    }
  }
}

}  // namespace

std::string candle_violation(const Candle& c) {
  const double open = c.open.value();
  const double high = c.high.value();
  const double low = c.low.value();
  const double close = c.close.value();
  if (open <= 0.0 || high <= 0.0 || low <= 0.0 || close <= 0.0) return "prices must be positive";
  if (high < low) return "high < low";
  if (low > std::min(open, close)) return "low above min(open, close)";
  if (high < std::max(open, close)) return "high below max(open, close)";
  return {};
}

CandleSeries::CandleSeries(std::string symbol, std::int64_t interval_ms, std::vector<Candle> candles)
    : symbol_(std::move(symbol)), interval_ms_(interval_ms), candles_(std::move(candles)) {
  if (interval_ms_ <= 0) throw ValidationError("interval must be positive");
  for (std::size_t i = 0; i < candles_.size(); ++i) {
    if (const std::string why = candle_violation(candles_[i]); !why.empty()) {
      throw ValidationError("candle " + std::to_string(i) + " (" + format_timestamp(candles_[i].open_time) +
                            "): " + why);
    }
    if (i > 0 && candles_[i].open_time <= candles_[i - 1].open_time) {
      throw ValidationError("candle " + std::to_string(i) + ": open_time not strictly increasing");
    }
  }
}

std::vector<double> CandleSeries::closes() const {
  std::vector<double> out;
  out.reserve(candles_.size());
  for (const auto& c : candles_) out.push_back(c.close.value());
  return out;
}

std::vector<double> CandleSeries::volumes() const {
  std::vector<double> out;
  out.reserve(candles_.size());
  for (const auto& c : candles_) out.push_back(c.volume.value());
  return out;
}

std::size_t CandleSeries::lower_bound(std::int64_t t) const {
  const auto it = std::lower_bound(candles_.begin(), candles_.end(), t,
                                   [](const Candle& c, std::int64_t value) { return c.open_time < value; });
  return static_cast<std::size_t>(it - candles_.begin());
}

CandleSeries CandleSeries::slice(std::size_t first, std::size_t last) const {
  last = std::min(last, candles_.size());
  first = std::min(first, last);
  CandleSeries out;
  out.symbol_ = symbol_;
  out.interval_ms_ = interval_ms_;
  out.candles_.assign(candles_.begin() + static_cast<std::ptrdiff_t>(first),
                      candles_.begin() + static_cast<std::ptrdiff_t>(last));
  return out;
}

bool CandleSeries::gapless() const {
  for (std::size_t i = 1; i < candles_.size(); ++i) {
    if (candles_[i].open_time - candles_[i - 1].open_time != interval_ms_) return false;
  }
  return true;
}

std::size_t GapReport::missing_bars(std::int64_t interval_ms) const {
  std::size_t missing = 0;
  for (const auto& gap : gaps) {
    if (gap.actual_open_time > gap.expected_open_time) {
      missing += static_cast<std::size_t>((gap.actual_open_time - gap.expected_open_time) / interval_ms);
    }
  }
  return missing;
}

GapReport find_gaps(const CandleSeries& series) {
  if (series.empty()) throw ArgumentError("find_gaps requires a non-empty series");
  GapReport report;
  const auto& candles = series.candles();
  for (std::size_t i = 1; i < candles.size(); ++i) {
    const std::int64_t expected = candles[i - 1].open_time + series.interval_ms();
    if (candles[i].open_time != expected) report.gaps.push_back({expected, candles[i].open_time});
  }
  return report;
}

void write_candles(const CandleSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << kCsvHeader << '\n';
  for (const auto& c : series.candles()) {
    out << c.open_time << ',' << c.open.text() << ',' << c.high.text() << ',' << c.low.text() << ','
        << c.close.text() << ',' << c.volume.text() << '\n';
  }
  out.flush();
  if (!out) throw IoError(path.string(), "write failed");
}

CandleSeries read_candles(const std::filesystem::path& path, const SeriesInfo& info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing CSV header", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) {
    throw ParseError(path.string() + ":1: expected header '" + std::string(kCsvHeader) + "'", 1);
  }

  std::vector<Candle> candles;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto fields = split(line, ',');
    if (fields.size() != 6) throw ParseError(where + "expected 6 fields", line_no);

    Candle c;
    const auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), c.open_time);
    if (ec != std::errc{} || ptr != fields[0].data() + fields[0].size()) {
      throw ParseError(where + "invalid open_time '" + std::string(fields[0]) + "'", line_no);
    }
    Decimal* targets[] = {&c.open, &c.high, &c.low, &c.close, &c.volume};
    for (std::size_t f = 0; f < 5; ++f) {
      if (!Decimal::is_valid(fields[f + 1])) {
        throw ParseError(where + "invalid decimal '" + std::string(fields[f + 1]) + "'", line_no);
      }
      *targets[f] = Decimal(fields[f + 1]);
    }
    if (const std::string why = candle_violation(c); !why.empty()) {
      throw ValidationError(where + why);
    }
    if (!candles.empty() && c.open_time <= candles.back().open_time) {
      throw ValidationError(where + (c.open_time == candles.back().open_time ? "duplicated open_time "
                                                                               : "non-monotone open_time ") +
                            std::to_string(c.open_time));
    }
    candles.push_back(std::move(c));
  }
  return CandleSeries(info.symbol, info.interval_ms, std::move(candles));
}

// ---- exchange access -------------------------------------------------------------------

HttpKlinesTransport::HttpKlinesTransport(std::string base_url, std::string route, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), route_(std::move(route)), timeout_(timeout) {}

std::string HttpKlinesTransport::get_klines(const KlinesQuery& query) {
  httplib::Client client(base_url_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  const httplib::Params params{
      {"symbol", query.symbol},
      {"interval", query.interval},
      {"startTime", std::to_string(query.start_time)},
      {"endTime", std::to_string(query.end_time)},
      {"limit", std::to_string(query.limit)},
  };
  auto result = client.Get(route_, params, httplib::Headers{});
  if (!result) {
    throw TransportError("GET " + base_url_ + route_ + " failed: " + httplib::to_string(result.error()));
  }
  if (result->status == 429 || result->status >= 500) {
    throw TransportError("GET " + base_url_ + route_ + " returned HTTP " + std::to_string(result->status));
  }
  if (result->status != 200) {
    throw Error("GET " + base_url_ + route_ + " returned HTTP " + std::to_string(result->status) + ": " +
                result->body);
  }
  return std::move(result->body);
}

FixtureKlinesTransport::FixtureKlinesTransport(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) throw ConfigError("fixture mode requires a fixture directory");
  if (!std::filesystem::is_directory(dir_)) {
    throw ConfigError("fixture directory does not exist: " + dir_.string());
  }
}

std::filesystem::path FixtureKlinesTransport::fixture_file(const std::filesystem::path& dir,
                                                           const std::string& symbol, const std::string& interval) {
  return dir / (symbol + "_" + interval + ".csv");
}

std::string FixtureKlinesTransport::get_klines(const KlinesQuery& query) {
  const std::string key = query.symbol + "_" + query.interval;
  auto it = std::find_if(loaded_.begin(), loaded_.end(), [&](const auto& entry) { return entry.first == key; });
  if (it == loaded_.end()) {
    const auto file = fixture_file(dir_, query.symbol, query.interval);
    if (!std::filesystem::exists(file)) throw ConfigError("no recorded fixture for " + key + " at " + file.string());
    loaded_.emplace_back(key, read_candles(file, {query.symbol, parse_interval(query.interval)}));
    it = std::prev(loaded_.end());
  }
  return klines_payload(it->second, query.start_time, query.end_time, query.limit);
}

std::string klines_payload(const CandleSeries& series, std::int64_t start, std::int64_t end_inclusive, int limit) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = series.lower_bound(start); i < series.size() && static_cast<int>(rows.size()) < limit; ++i) {
    const Candle& c = series[i];
    if (c.open_time > end_inclusive) break;
    rows.push_back({c.open_time, c.open.text(), c.high.text(), c.low.text(), c.close.text(), c.volume.text(),
                    c.open_time + series.interval_ms() - 1, "0", 0, "0", "0", "0"});
  }
  return rows.dump();
}

std::vector<Candle> parse_klines_payload(std::string_view body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed klines payload at byte ") + std::to_string(e.byte) + ": " + e.what(),
                     e.byte);
  }
  if (!doc.is_array()) throw ParseError("klines payload is not a JSON array", 0);

  std::vector<Candle> candles;
  candles.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& row = doc[i];
    if (!row.is_array() || row.size() < 6 || !row[0].is_number_integer()) {
      throw ParseError("klines payload row " + std::to_string(i) + " is not [open_time, o, h, l, c, v, ...]",
                       element_offset(body, i));
    }
    Candle c;
    c.open_time = row[0].get<std::int64_t>();
    c.open = decimal_field(row[1], body, i, "open");
    c.high = decimal_field(row[2], body, i, "high");
    c.low = decimal_field(row[3], body, i, "low");
    c.close = decimal_field(row[4], body, i, "close");
    c.volume = decimal_field(row[5], body, i, "volume");
    candles.push_back(std::move(c));
  }
  return candles;
}

DataSourceConfig DataSourceConfig::from_env() { return from_env(DataSourceConfig{}); }

DataSourceConfig DataSourceConfig::from_env(DataSourceConfig base) {
  if (const char* mode = std::getenv("CANDLEFORGE_DATA_MODE")) {
    const std::string_view value(mode);
    if (value == "live") {
      base.mode = DataMode::kLive;
    } else if (value == "fixture") {
      base.mode = DataMode::kFixture;
    } else {
      throw ConfigError("CANDLEFORGE_DATA_MODE must be 'live' or 'fixture', got '" + std::string(value) + "'");
    }
  }
  if (const char* dir = std::getenv("CANDLEFORGE_FIXTURE_DIR")) base.fixture_dir = dir;
  if (const char* api = std::getenv("CANDLEFORGE_API_BASE")) base.api_base = api;
  return base;
}

std::string DataSourceConfig::default_base_url() const {
  return market == MarketKind::kFutures ? "https://fapi.binance.com" : "https://api.binance.com";
}

std::string DataSourceConfig::klines_route() const {
  return market == MarketKind::kFutures ? "/fapi/v1/klines" : "/api/v3/klines";
}

std::unique_ptr<KlinesTransport> make_transport(const DataSourceConfig& config) {
  if (config.mode == DataMode::kFixture) {
    if (config.fixture_dir.empty()) throw ConfigError("offline fixture mode configured without a fixture directory");
    return std::make_unique<FixtureKlinesTransport>(config.fixture_dir);
  }
  return std::make_unique<HttpKlinesTransport>(config.api_base.empty() ? config.default_base_url() : config.api_base,
                                               config.klines_route());
}

CandleSeries fetch_klines(const std::string& symbol, std::int64_t interval_ms, std::int64_t start, std::int64_t end,
                          KlinesTransport& transport, const DataSourceConfig& config) {
  if (!(start < end)) throw ArgumentError("fetch_klines requires start < end");
  if (interval_ms <= 0) throw ArgumentError("fetch_klines requires a positive interval");
  if (config.page_limit <= 0) throw ArgumentError("page limit must be positive");

  const std::string interval = format_interval(interval_ms);
  std::vector<Candle> collected;
  std::int64_t cursor = start;
  while (cursor < end) {
    const KlinesQuery query{symbol, interval, cursor, end - 1, config.page_limit};
    const std::string body = with_retries(config, [&] { return transport.get_klines(query); });
    const std::vector<Candle> page = parse_klines_payload(body);

    std::int64_t newest = cursor - 1;
    std::size_t kept = 0;
    for (const auto& c : page) {
      if (c.open_time < start || c.open_time >= end) continue;
      newest = std::max(newest, c.open_time);
      collected.push_back(c);
      ++kept;
    }
    if (kept == 0 || newest < cursor) break;
    cursor = newest + interval_ms;
    if (static_cast<int>(page.size()) < config.page_limit) break;
  }

  std::stable_sort(collected.begin(), collected.end(),
                   [](const Candle& a, const Candle& b) { return a.open_time < b.open_time; });
  collected.erase(std::unique(collected.begin(), collected.end(),
                              [](const Candle& a, const Candle& b) { return a.open_time == b.open_time; }),
                  collected.end());
  return CandleSeries(symbol, interval_ms, std::move(collected));
}

CandleSeries fetch_klines(const std::string& symbol, std::int64_t interval_ms, std::int64_t start, std::int64_t end,
                          const DataSourceConfig& config) {
  if (!(start < end)) throw ArgumentError("fetch_klines requires start < end");
  auto transport = make_transport(config);
  return fetch_klines(symbol, interval_ms, start, end, *transport, config);
}

CandleSeries synthetic_series(const SyntheticSeriesOptions& options) {
  Rng rng(options.seed);
  std::vector<Candle> candles;
  candles.reserve(options.count);
  const auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };

  double close = round2(options.initial_price);
  for (std::size_t i = 0; i < options.count; ++i) {
    const double open = close;
    close = round2(open * std::exp(options.bar_volatility * rng.normal()));
    const double wick = 0.5 * options.bar_volatility;
    const double high = round2(std::max(open, close) * (1.0 + wick * std::abs(rng.normal())));
    const double low = round2(std::min(open, close) * (1.0 - wick * std::abs(rng.normal())));
    const double volume = 900.0 * std::exp(0.45 * rng.normal());

    Candle c;
    c.open_time = options.start + static_cast<std::int64_t>(i) * options.interval_ms;
    c.open = Decimal::from_double(open, 2);
    c.high = Decimal::from_double(high, 2);
    c.low = Decimal::from_double(low, 2);
    c.close = Decimal::from_double(close, 2);
    c.volume = Decimal::from_double(volume, 3);
    candles.push_back(std::move(c));
  }
  return CandleSeries(options.symbol, options.interval_ms, std::move(candles));
}

}  // namespace candleforge
