#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/dataset.hpp"
#include "candleforge/image.hpp"
#include "candleforge/trend_label.hpp"

namespace candleforge {

struct MeanRgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
};

// Arithmetic mean of each channel over the style's marker square.
MeanRgb read_mark(const RgbImage& image, const ChartStyle& style);

// Nearest palette color by Euclidean RGB distance; ties resolve black, then red, then blue.
TrendLabel classify_mark(const MeanRgb& mean, const MarkerPalette& palette);

// Rows are actual, columns predicted, both in blue/red/black order.
using ConfusionMatrix = std::array<std::array<std::int64_t, 3>, 3>;

ConfusionMatrix confusion(const std::vector<TrendLabel>& predicted, const std::vector<TrendLabel>& actual);

// Percentages are kept as exact hundredths (half away from zero) so 8.06 stays 806.
struct ClassMetrics {
  std::int64_t precision_bp = 0;  // hundredths of a percent
  std::int64_t recall_bp = 0;
  std::int64_t f1_bp = 0;
  std::int64_t support = 0;

  double precision() const noexcept { return precision_bp / 100.0; }
  double recall() const noexcept { return recall_bp / 100.0; }
  double f1() const noexcept { return f1_bp / 100.0; }
};

struct MetricsReport {
  ConfusionMatrix matrix{};
  std::array<ClassMetrics, 3> per_class{};  // blue, red, black
  std::int64_t correct = 0;
  std::int64_t total = 0;
  std::int64_t accuracy_bp = 0;

  double accuracy() const noexcept { return accuracy_bp / 100.0; }

  // Two tables mirroring the per-class metrics and the confusion matrix layouts.
  std::string format_table() const;
};

void to_json(nlohmann::json& j, const MetricsReport& report);

// Hundredths of a percent of num/den, rounded half away from zero with integer arithmetic.
// 0/0 is 0.
std::int64_t percent_hundredths(std::int64_t num, std::int64_t den);

MetricsReport metrics_from_confusion(const ConfusionMatrix& matrix);

struct SampleResult {
  std::size_t n = 0;
  TrendLabel actual = TrendLabel::kFlat;
  TrendLabel predicted = TrendLabel::kFlat;
  MeanRgb mean;
};

struct EvaluationRun {
  MetricsReport report;
  std::vector<SampleResult> samples;
};

// Generated image for a record: `<generated_dir>/<file name of record.edited_path>`.
std::filesystem::path generated_image_path(const std::filesystem::path& generated_dir, const ManifestRecord& record);

// read_mark -> classify_mark -> confusion -> metrics over every manifest record. Missing
// images raise IoError listing the record ids.
EvaluationRun evaluate_run(const Manifest& manifest, const std::filesystem::path& generated_dir,
                           const ChartStyle& style);

// Writes samples.csv (`n,actual,predicted,mean_r,mean_g,mean_b`), metrics.json and metrics.txt.
void write_evaluation(const EvaluationRun& run, const std::filesystem::path& out_dir);

}  // namespace candleforge
