#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "candleforge/dataset.hpp"
#include "candleforge/error.hpp"
#include "candleforge/evaluation.hpp"
#include "candleforge/time_util.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace candleforge;
namespace fs = std::filesystem;

TEST(Evaluation, ReferenceTablesFromConfusion) {
  const ConfusionMatrix m{{{5, 4, 34}, {3, 10, 54}, {54, 94, 523}}};
  const auto r = metrics_from_confusion(m);
  const std::int64_t precision[] = {806, 926, 8560}, recall[] = {1163, 1493, 7794}, f1[] = {952, 1143, 8159};
  const std::int64_t support[] = {43, 67, 671};
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(r.per_class[c].precision_bp, precision[c]);
    EXPECT_EQ(r.per_class[c].recall_bp, recall[c]);
    EXPECT_EQ(r.per_class[c].f1_bp, f1[c]);
    EXPECT_EQ(r.per_class[c].support, support[c]);
  }
  EXPECT_EQ(r.accuracy_bp, 6889);
  EXPECT_EQ(r.correct, 538);
  EXPECT_EQ(r.total, 781);
  EXPECT_NE(r.format_table().find("68.89% (538/781)"), std::string::npos);
}

TEST(Evaluation, MetricEdgeCases) {
  const auto diag = metrics_from_confusion(ConfusionMatrix{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}});
  for (const auto& c : diag.per_class) {
    EXPECT_EQ(c.precision_bp, 10000);
    EXPECT_EQ(c.recall_bp, 10000);
    EXPECT_EQ(c.f1_bp, 10000);
  }
  EXPECT_EQ(diag.accuracy_bp, 10000);

  const auto absent = metrics_from_confusion(ConfusionMatrix{{{4, 0, 1}, {0, 0, 0}, {2, 0, 3}}});
  EXPECT_EQ(absent.per_class[1].precision_bp, 0);
  EXPECT_EQ(absent.per_class[1].recall_bp, 0);
  EXPECT_EQ(absent.per_class[1].f1_bp, 0);

  const auto zero = metrics_from_confusion(ConfusionMatrix{});
  EXPECT_EQ(zero.accuracy_bp, 0);
  EXPECT_EQ(zero.total, 0);
  EXPECT_EQ(percent_hundredths(1, 8), 1250);
  EXPECT_EQ(percent_hundredths(1, 3), 3333);
  EXPECT_EQ(percent_hundredths(2, 3), 6667);
}

TEST(Evaluation, AccuracyIsTraceOverTotalAndRowsAreSupports) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    ConfusionMatrix m{};
    std::int64_t trace = 0, total = 0;
    for (int a = 0; a < 3; ++a) {
      for (int p = 0; p < 3; ++p) {
        m[a][p] = static_cast<std::int64_t>(rng.below(50));
        total += m[a][p];
        if (a == p) trace += m[a][p];
      }
    }
    const auto r = metrics_from_confusion(m);
    EXPECT_EQ(r.correct, trace);
    EXPECT_EQ(r.total, total);
    EXPECT_EQ(r.accuracy_bp, percent_hundredths(trace, total));
    for (int a = 0; a < 3; ++a) EXPECT_EQ(r.per_class[a].support, m[a][0] + m[a][1] + m[a][2]);
  }
}

TEST(Evaluation, ConfusionCounts) {
  using L = TrendLabel;
  const std::vector<L> actual{L::kDown, L::kUp, L::kFlat, L::kFlat};
  const auto m = confusion(actual, actual);
  EXPECT_EQ(m[0][0] + m[1][1] + m[2][2], 4);
  EXPECT_EQ(m[2][2], 2);
  EXPECT_EQ(confusion({}, {}), ConfusionMatrix{});
  EXPECT_THROW(confusion({L::kUp}, {}), ArgumentError);
  const auto off = confusion({L::kUp}, {L::kDown});  // predicted, actual
  EXPECT_EQ(off[label_index(L::kDown)][label_index(L::kUp)], 1);
}

TEST(Evaluation, ReadMarkExamples) {
  const ChartStyle style;
  const auto r = style.marker_rect();
  RgbImage img(256, 256, {255, 255, 255});
  img.fill_rect(r.x0, r.y0, r.x1 - 1, r.y1 - 1, {220, 40, 40});
  auto m = read_mark(img, style);
  EXPECT_DOUBLE_EQ(m.r, 220);
  EXPECT_DOUBLE_EQ(m.g, 40);
  EXPECT_DOUBLE_EQ(m.b, 40);

  img.fill_rect(r.x0, r.y0, r.x1 - 1, r.y0 + r.height() / 2 - 1, {20, 20, 20});
  m = read_mark(img, style);
  EXPECT_DOUBLE_EQ(m.r, 120);
  EXPECT_DOUBLE_EQ(m.g, 30);
  EXPECT_DOUBLE_EQ(m.b, 30);
  EXPECT_THROW(read_mark(RgbImage(20, 20), style), ConfigError);
}

TEST(Evaluation, ClassifyMatchesBruteForce) {
  const MarkerPalette p;
  EXPECT_EQ(classify_mark({220, 40, 40}, p), TrendLabel::kUp);
  EXPECT_EQ(classify_mark({20, 20, 20}, p), TrendLabel::kFlat);
  EXPECT_EQ(classify_mark({128, 128, 128}, p), TrendLabel::kUp);  // red/blue tie resolves to red
  EXPECT_EQ(cftest::oracle_classify(128, 128, 128, p), TrendLabel::kUp);
  Rng rng(9);
  for (int i = 0; i < 20000; ++i) {
    const double r = rng.below(256), g = rng.below(256), b = rng.below(256);
    ASSERT_EQ(classify_mark({r, g, b}, p), cftest::oracle_classify(r, g, b, p)) << r << "," << g << "," << b;
  }
}

TEST(Evaluation, RoundTripAndPermutation) {
  cftest::TempDir tmp;
  const auto full = read_candles(cftest::fixture_csv(), {"BTCUSDT", kFourHoursMs});
  const auto s = full.slice(0, 400);
  auto pairs = enumerate_pairs(s, EnumerationOptions{});
  pairs.resize(30);
  const ChartStyle style = ChartStyle::for_size(64, 64);
  const auto m = materialize(pairs, style, tmp.path / "ds", ManifestMetadata{});

  // ground truth fed back as generated
  fs::create_directories(tmp.path / "gen");
  for (const auto& r : m.records) fs::copy_file(m.resolve(r.edited_path), generated_image_path(tmp.path / "gen", r));
  const auto run = evaluate_run(m, tmp.path / "gen", style);
  EXPECT_EQ(run.report.accuracy_bp, 10000);
  write_evaluation(run, tmp.path / "out");
  EXPECT_TRUE(fs::exists(tmp.path / "out" / "samples.csv"));
  const auto json = nlohmann::json::parse(std::ifstream(tmp.path / "out" / "metrics.json"));
  EXPECT_EQ(json["total"], 30);

  // rotate generated images by one record: accuracy is the fraction of fixed points
  std::size_t fixed = 0;
  fs::create_directories(tmp.path / "rot");
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& src = m.records[(i + 1) % m.records.size()];
    fs::copy_file(m.resolve(src.edited_path), generated_image_path(tmp.path / "rot", m.records[i]));
    fixed += src.label == m.records[i].label;
  }
  const auto rot = evaluate_run(m, tmp.path / "rot", style);
  EXPECT_EQ(rot.report.correct, static_cast<std::int64_t>(fixed));

  fs::remove(generated_image_path(tmp.path / "rot", m.records[3]));
  try {
    evaluate_run(m, tmp.path / "rot", style);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(m.records[3].n)), std::string::npos) << e.what();
  }
}
