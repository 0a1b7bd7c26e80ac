#include <gtest/gtest.h>

#include <fstream>

#include "candleforge/dataset.hpp"
#include "candleforge/error.hpp"
#include "candleforge/evaluation.hpp"
#include "candleforge/time_util.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace candleforge;
namespace fs = std::filesystem;

namespace {

CandleSeries fixture_range(const char* start, const char* end) {
  const auto full = read_candles(cftest::fixture_csv(), {"BTCUSDT", kFourHoursMs});
  return full.slice(full.lower_bound(parse_timestamp(start)), full.lower_bound(parse_timestamp(end)));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Dataset, LabelExamples) {
  EXPECT_EQ(label_from_prices(Decimal("100"), Decimal("103")), TrendLabel::kUp);
  EXPECT_EQ(label_from_prices(Decimal("100"), Decimal("102")), TrendLabel::kFlat);
  EXPECT_EQ(label_from_prices(Decimal("100"), Decimal("98")), TrendLabel::kFlat);
  EXPECT_EQ(label_from_prices(Decimal("100"), Decimal("97.9")), TrendLabel::kDown);
  EXPECT_EQ(label_from_prices(Decimal("50"), Decimal("51")), TrendLabel::kFlat);  // exactly 2%
  EXPECT_THROW(label_from_prices(0.0, 1.0), ArgumentError);
}

TEST(Dataset, LabelIsSymmetricAroundTheBand) {
  for (int i = 1; i <= 200; ++i) {
    const double r = 0.0201 + 0.001 * i;
    EXPECT_EQ(label_from_prices(100.0, 100.0 * (1 + r)), TrendLabel::kUp);
    EXPECT_EQ(label_from_prices(100.0, 100.0 * (1 - r)), TrendLabel::kDown);
    const double inside = 0.0001 * (i % 200);
    EXPECT_EQ(label_from_prices(100.0, 100.0 * (1 + inside)), TrendLabel::kFlat);
    EXPECT_EQ(label_from_prices(100.0, 100.0 * (1 - inside)), TrendLabel::kFlat);
  }
}

TEST(Dataset, PromptExamples) {
  EXPECT_EQ(format_prompt(55.3, 120.5), "Predict next candle, RSI is 55.30, MACD is 120.50");
  EXPECT_EQ(format_prompt(0, 0), "Predict next candle, RSI is 0.00, MACD is 0.00");
  EXPECT_EQ(format_prompt(100, -3.125), "Predict next candle, RSI is 100.00, MACD is -3.13");
  EXPECT_EQ(format_prompt(0.125, -0.001), "Predict next candle, RSI is 0.13, MACD is 0.00");
  EXPECT_THROW(format_prompt(100.5, 0), ArgumentError);

  const auto v = parse_prompt(format_prompt(55.3, 120.5));
  EXPECT_DOUBLE_EQ(v.rsi, 55.30);
  EXPECT_DOUBLE_EQ(v.macd, 120.50);
  EXPECT_DOUBLE_EQ(parse_prompt(format_prompt(12, -845.678)).macd, -845.68);
  EXPECT_THROW(parse_prompt("Predict next candle"), ParseError);
}

TEST(Dataset, TrainingRangeGives2419Pairs) {
  const auto s = fixture_range("2024-01-01", "2025-03-01");
  ASSERT_EQ(s.size(), 2550u);
  EnumerationOptions o;
  const auto idx = enumerate_pair_indices(s, indicator_frame(s), o);
  EXPECT_EQ(idx.size(), 2419u);
  EXPECT_EQ(expected_pair_count(s.size(), o), 2419u);
  EXPECT_EQ(idx.front(), 128u);
}

TEST(Dataset, SmallSeriesCounts) {
  EnumerationOptions o;
  EXPECT_EQ(enumerate_pairs(cftest::gapless_series(131), o).size(), 0u);
  const auto one = enumerate_pairs(cftest::gapless_series(132), o);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].n, 128u);
}

TEST(Dataset, CountFormulaMatchesBruteForce) {
  const auto series = cftest::gapless_series(400);
  const auto frame = indicator_frame(series);
  for (WarmupMode mode : {WarmupMode::kInSample, WarmupMode::kPrefetched}) {
    for (std::size_t window : {1u, 5u, 40u}) {
      for (std::size_t T = 0; T <= 400; T += (T < 140 ? 1 : 7)) {
        EnumerationOptions o;
        o.window_len = window;
        o.warmup = mode;
        const std::size_t history = mode == WarmupMode::kPrefetched ? std::min<std::size_t>(T, 89) : 0;
        o.range_start = history;
        const auto sub = series.slice(0, T);
        const auto got = enumerate_pair_indices(sub, frame.slice(0, T), o).size();
        EXPECT_EQ(got, cftest::brute_force_pair_count(T, o)) << "T " << T << " window " << window;
        if (window == 40 && T >= history) {
          EXPECT_EQ(got, expected_pair_count(T - history, o)) << "T " << T;
        }
      }
    }
  }
}

TEST(Dataset, GapsAreSkippedUnlessBridged) {
  auto candles = cftest::gapless_series(300).candles();
  candles.erase(candles.begin() + 200);
  const CandleSeries holed("BTCUSDT", kFourHoursMs, candles);
  EnumerationOptions o;
  const auto skipped = enumerate_pair_indices(holed, indicator_frame(holed), o);
  for (std::size_t n : skipped) EXPECT_FALSE(n + 1 - o.window_len < 200 && n + o.lookahead >= 200) << n;
  o.bridge_gaps = true;
  const auto bridged = enumerate_pair_indices(holed, indicator_frame(holed), o);
  EXPECT_EQ(bridged.size(), expected_pair_count(holed.size(), o));
  EXPECT_EQ(bridged.size() - skipped.size(), o.window_len + o.lookahead - 1);
}

TEST(Dataset, PairContents) {
  const auto s = fixture_range("2024-01-01", "2024-03-01");
  const auto f = indicator_frame(s);
  EnumerationOptions o;
  const auto pairs = enumerate_pairs(s, f, o);
  ASSERT_FALSE(pairs.empty());
  for (const auto& p : pairs) {
    EXPECT_EQ(p.edited_window.end_index, p.n + 3);
    EXPECT_EQ(p.input_window.size(), 40u);
    EXPECT_EQ(p.label, label_from_prices(s[p.n].close, s[p.n + 3].close));
    EXPECT_EQ(p.prompt, format_prompt(*f.rsi14[p.n], *f.macd_line[p.n]));
    for (const auto& v : p.input_window.frame.sma90) EXPECT_TRUE(v.has_value());
  }
}

TEST(Dataset, MaterializeWritesImagesAndManifest) {
  cftest::TempDir tmp;
  const auto s = fixture_range("2024-01-01", "2024-02-10");
  auto pairs = enumerate_pairs(s, EnumerationOptions{});
  ASSERT_GE(pairs.size(), 10u);
  pairs.resize(10);
  const ChartStyle style = ChartStyle::for_size(64, 64);
  ManifestMetadata meta;
  meta.symbol = "BTCUSDT";
  meta.interval = "4h";
  const auto m = materialize(pairs, style, tmp.path / "a", meta);
  EXPECT_EQ(m.records.size(), 10u);
  std::size_t images = 0;
  for (const auto& e : fs::recursive_directory_iterator(tmp.path / "a")) images += e.path().extension() == ".png";
  EXPECT_EQ(images, 20u);

  for (const auto& r : m.records) {
    const auto edited = read_png(m.resolve(r.edited_path));
    EXPECT_EQ(classify_mark(read_mark(edited, style), style.palette), r.label);
  }

  const auto back = read_manifest(tmp.path / "a");
  EXPECT_EQ(back.records, m.records);
  EXPECT_EQ(back.metadata.style, style);
  EXPECT_EQ(back.metadata.style_hash, style.hash());

  materialize(pairs, style, tmp.path / "b", meta);
  for (const auto& e : fs::recursive_directory_iterator(tmp.path / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), tmp.path / "a");
    EXPECT_EQ(slurp(e.path()), slurp(tmp.path / "b" / rel)) << rel;
  }

  const auto empty = materialize({}, style, tmp.path / "c", meta);
  EXPECT_TRUE(empty.records.empty());
  EXPECT_EQ(read_manifest(tmp.path / "c").records.size(), 0u);
}
