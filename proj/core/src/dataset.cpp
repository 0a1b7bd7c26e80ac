#include "candleforge/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <nlohmann/json.hpp>

#include "candleforge/error.hpp"

namespace candleforge {
namespace {

using ExactDecimal = boost::multiprecision::cpp_dec_float_50;

std::string shortest_text(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  if (ec != std::errc{}) throw ArgumentError("cannot format value");
  return std::string(buffer, ptr);
}

TrendLabel label_exact(const ExactDecimal& close_n, const ExactDecimal& close_n3, const ExactDecimal& threshold) {
  if (close_n <= 0) throw ArgumentError("label_from_prices requires close_n > 0");
  // r > thr  <=>  close_n3 - close_n > thr * close_n (close_n > 0)
  const ExactDecimal move = close_n3 - close_n;
  const ExactDecimal band = threshold * close_n;
  if (move > band) return TrendLabel::kUp;
  if (move < -band) return TrendLabel::kDown;
  return TrendLabel::kFlat;
}

std::string format_hundredths(long double value) {
  const long double scaled = std::round(value * 100.0L);
  long long hundredths = static_cast<long long>(scaled);
  const bool negative = hundredths < 0;
  if (negative) hundredths = -hundredths;
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%s%lld.%02lld", negative ? "-" : "", hundredths / 100, hundredths % 100);
  return buffer;
}

std::string image_name(std::size_t n, const char* kind) {
  char buffer[48];
  std::snprintf(buffer, sizeof buffer, "images/%06zu_%s.png", n, kind);
  return buffer;
}

nlohmann::json record_to_json(const ManifestRecord& r) {
  return {{"n", r.n},
          {"open_time_n", r.open_time_n},
          {"input_path", r.input_path},
          {"edited_path", r.edited_path},
          {"prompt", r.prompt},
          {"label", std::string(color_name(r.label))}};
}

ManifestRecord record_from_json(const nlohmann::json& j) {
  ManifestRecord r;
  r.n = j.at("n").get<std::size_t>();
  r.open_time_n = j.at("open_time_n").get<std::int64_t>();
  r.input_path = j.at("input_path").get<std::string>();
  r.edited_path = j.at("edited_path").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  const auto label = parse_label(j.at("label").get<std::string>());
  if (!label) throw ParseError("unknown label '" + j.at("label").get<std::string>() + "'", 0);
  r.label = *label;
  return r;
}

}  // namespace

TrendLabel label_from_prices(const Decimal& close_n, const Decimal& close_n3, double threshold) {
  if (!(threshold >= 0.0)) throw ArgumentError("threshold must be non-negative");
  return label_exact(ExactDecimal(close_n.text()), ExactDecimal(close_n3.text()), ExactDecimal(shortest_text(threshold)));
}

TrendLabel label_from_prices(double close_n, double close_n3, double threshold) {
  if (!(close_n > 0.0)) throw ArgumentError("label_from_prices requires close_n > 0");
  if (!(threshold >= 0.0)) throw ArgumentError("threshold must be non-negative");
  return label_exact(ExactDecimal(shortest_text(close_n)), ExactDecimal(shortest_text(close_n3)),
                     ExactDecimal(shortest_text(threshold)));
}

double round2(double value) {
  // 53 mantissa bits times 100 fits exactly in the 64-bit long double mantissa.
  return static_cast<double>(std::round(static_cast<long double>(value) * 100.0L) / 100.0L);
}

std::string format_prompt(double rsi, double macd) {
  if (!(rsi >= 0.0 && rsi <= 100.0)) throw ArgumentError("RSI must lie in [0, 100]");
  if (!std::isfinite(macd)) throw ArgumentError("MACD must be finite");
  return "Predict next candle, RSI is " + format_hundredths(rsi) + ", MACD is " + format_hundredths(macd);
}

PromptValues parse_prompt(std::string_view prompt) {
  static const std::regex kPattern(
      R"(^Predict next candle, RSI is (-?[0-9]+(?:\.[0-9]+)?), MACD is (-?[0-9]+(?:\.[0-9]+)?)$)");
  std::match_results<std::string_view::const_iterator> match;
  if (!std::regex_match(prompt.begin(), prompt.end(), match, kPattern)) {
    throw ParseError("prompt does not match 'Predict next candle, RSI is {value}, MACD is {value}': '" +
                         std::string(prompt) + "'",
                     0);
  }
  const auto to_double = [](const auto& sub) {
    const std::string text = sub.str();
    double value = 0.0;
    std::from_chars(text.data(), text.data() + text.size(), value);
    return value;
  };
  return {round2(to_double(match[1])), round2(to_double(match[2]))};
}

std::vector<std::size_t> enumerate_pair_indices(const CandleSeries& series, const IndicatorFrame& frame,
                                                const EnumerationOptions& options) {
  if (options.window_len == 0) throw ArgumentError("window length must be positive");
  if (frame.size() != series.size()) throw ArgumentError("indicator frame is not aligned to the series");
  const std::size_t total = series.size();
  const std::size_t range_start = options.warmup == WarmupMode::kInSample ? 0 : options.range_start;
  const auto slow_ready = static_cast<std::size_t>(std::max(options.periods.sma_slow - 1, 0));

  // gaps_before[i] = number of gaps among the first i consecutive deltas.
  std::vector<std::size_t> gaps_before(total + 1, 0);
  for (std::size_t i = 1; i < total; ++i) {
    const bool gap = series[i].open_time - series[i - 1].open_time != series.interval_ms();
    gaps_before[i + 1] = gaps_before[i] + (gap ? 1 : 0);
  }

  std::vector<std::size_t> out;
  const std::size_t first_n = std::max(range_start, slow_ready) + options.window_len - 1;
  for (std::size_t n = first_n; n + options.lookahead < total; ++n) {
    const std::size_t first = n + 1 - options.window_len;
    const std::size_t last = n + options.lookahead;
    if (!options.bridge_gaps && gaps_before[last + 1] != gaps_before[first + 1]) continue;
    if (!frame.rsi14[n] || !frame.macd_line[n] || !frame.sma90[first]) continue;
    out.push_back(n);
  }
  return out;
}

TrainingPairSpec make_pair(const CandleSeries& series, const IndicatorFrame& frame, std::size_t n,
                           const EnumerationOptions& options) {
  if (n + options.lookahead >= series.size()) throw ArgumentError("pair end index beyond series");
  if (!frame.rsi14[n] || !frame.macd_line[n]) throw ArgumentError("indicators undefined at pair end index");
  TrainingPairSpec pair;
  pair.n = n;
  pair.open_time_n = series[n].open_time;
  pair.input_window = make_window(series, frame, n, options.window_len);
  pair.edited_window = make_window(series, frame, n + options.lookahead, options.window_len);
  pair.close_n = series[n].close;
  pair.close_n3 = series[n + options.lookahead].close;
  pair.label = label_from_prices(pair.close_n, pair.close_n3, options.threshold);
  pair.prompt = format_prompt(*frame.rsi14[n], *frame.macd_line[n]);
  return pair;
}

std::vector<TrainingPairSpec> enumerate_pairs(const CandleSeries& series, const IndicatorFrame& frame,
                                              const EnumerationOptions& options) {
  std::vector<TrainingPairSpec> pairs;
  for (const std::size_t n : enumerate_pair_indices(series, frame, options)) {
    pairs.push_back(make_pair(series, frame, n, options));
  }
  return pairs;
}

std::vector<TrainingPairSpec> enumerate_pairs(const CandleSeries& series, const EnumerationOptions& options) {
  return enumerate_pairs(series, indicator_frame(series, options.periods), options);
}

std::size_t expected_pair_count(std::size_t range_len, const EnumerationOptions& options) {
  std::size_t consumed = options.lookahead + options.window_len;
  if (options.warmup == WarmupMode::kInSample) consumed += static_cast<std::size_t>(options.periods.sma_slow - 1);
  return range_len + 1 > consumed ? range_len + 1 - consumed : 0;
}

// ---- manifest -----------------------------------------------------------------------------

void write_manifest(const Manifest& manifest, const std::filesystem::path& directory) {
  const auto records_path = directory / kManifestFile;
  std::ofstream records(records_path, std::ios::binary | std::ios::trunc);
  if (!records) throw IoError(records_path.string(), "cannot open for writing");
  for (const auto& r : manifest.records) records << record_to_json(r).dump() << '\n';
  if (!records.flush()) throw IoError(records_path.string(), "write failed");

  const ManifestMetadata& m = manifest.metadata;
  const nlohmann::json meta = {{"symbol", m.symbol},
                               {"interval", m.interval},
                               {"window_len", m.window_len},
                               {"lookahead", m.lookahead},
                               {"threshold", m.threshold},
                               {"warmup", m.warmup},
                               {"style_hash", m.style_hash},
                               {"style", m.style},
                               {"record_count", manifest.records.size()}};
  const auto meta_path = directory / kManifestMetaFile;
  std::ofstream meta_out(meta_path, std::ios::binary | std::ios::trunc);
  if (!meta_out) throw IoError(meta_path.string(), "cannot open for writing");
  meta_out << meta.dump(2) << '\n';
  if (!meta_out.flush()) throw IoError(meta_path.string(), "write failed");
}

Manifest read_manifest(const std::filesystem::path& path) {
  const std::filesystem::path directory =
      std::filesystem::is_directory(path) ? path : path.parent_path();
  Manifest manifest;
  manifest.directory = directory;

  const auto meta_path = directory / kManifestMetaFile;
  std::ifstream meta_in(meta_path, std::ios::binary);
  if (!meta_in) throw IoError(meta_path.string(), "cannot open for reading");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(meta_path.string() + ": " + e.what(), e.byte);
  }
  ManifestMetadata& m = manifest.metadata;
  m.symbol = meta.at("symbol").get<std::string>();
  m.interval = meta.at("interval").get<std::string>();
  m.window_len = meta.at("window_len").get<std::size_t>();
  m.lookahead = meta.at("lookahead").get<std::size_t>();
  m.threshold = meta.at("threshold").get<double>();
  m.warmup = meta.at("warmup").get<std::string>();
  m.style_hash = meta.at("style_hash").get<std::string>();
  m.style = meta.at("style").get<ChartStyle>();
  m.record_count = meta.at("record_count").get<std::size_t>();

  const auto records_path = directory / kManifestFile;
  std::ifstream in(records_path, std::ios::binary);
  if (!in) throw IoError(records_path.string(), "cannot open for reading");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      manifest.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(records_path.string() + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  if (manifest.records.size() != m.record_count) {
    throw ValidationError(records_path.string() + ": " + std::to_string(manifest.records.size()) +
                          " records but metadata declares " + std::to_string(m.record_count));
  }
  return manifest;
}

Manifest materialize(const std::vector<TrainingPairSpec>& pairs, const ChartStyle& style,
                     const std::filesystem::path& out_dir, ManifestMetadata metadata) {
  namespace fs = std::filesystem;
  style.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string(), "cannot create output directory: " + ec.message());

  const fs::path staging = out_dir / ".staging";
  fs::remove_all(staging, ec);
  Manifest manifest;
  manifest.directory = out_dir;
  try {
    fs::create_directories(staging / "images");
    for (const auto& pair : pairs) {
      ManifestRecord record{pair.n,   pair.open_time_n, image_name(pair.n, "input"), image_name(pair.n, "edited"),
                            pair.prompt, pair.label};
      write_png(render_window(pair.input_window, std::nullopt, style).pixels, staging / record.input_path);
      write_png(render_window(pair.edited_window, pair.label, style).pixels, staging / record.edited_path);
      manifest.records.push_back(std::move(record));
    }
    metadata.style = style;
    metadata.style_hash = style.hash();
    metadata.record_count = manifest.records.size();
    manifest.metadata = std::move(metadata);
    write_manifest(manifest, staging);

    fs::remove_all(out_dir / "images");
    if (!pairs.empty()) fs::rename(staging / "images", out_dir / "images");
    fs::rename(staging / kManifestFile, out_dir / kManifestFile);
    fs::rename(staging / kManifestMetaFile, out_dir / kManifestMetaFile);
    fs::remove_all(staging);
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(staging, ec);
    throw IoError(e.path1().string(), e.what());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
  return manifest;
}

}  // namespace candleforge
