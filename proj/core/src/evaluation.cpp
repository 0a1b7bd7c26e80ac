#include "candleforge/evaluation.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "candleforge/error.hpp"

namespace candleforge {

MeanRgb read_mark(const RgbImage& image, const ChartStyle& style) {
  const PixelRect r = style.marker_rect();
  if (r.x0 < 0 || r.y0 < 0 || r.x1 > image.width() || r.y1 > image.height() || r.width() < 1 || r.height() < 1) {
    throw ConfigError("marker square does not fit in a " + std::to_string(image.width()) + "x" +
                      std::to_string(image.height()) + " image");
  }
  std::uint64_t sum[3] = {0, 0, 0};
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      const Rgb c = image.at(x, y);
      sum[0] += c.r;
      sum[1] += c.g;
      sum[2] += c.b;
    }
  }
  const double count = static_cast<double>(r.width()) * r.height();
  return {sum[0] / count, sum[1] / count, sum[2] / count};
}

TrendLabel classify_mark(const MeanRgb& mean, const MarkerPalette& palette) {
  const auto dist2 = [&](const Rgb& c) {
    const double dr = mean.r - c.r;
    const double dg = mean.g - c.g;
    const double db = mean.b - c.b;
    return dr * dr + dg * dg + db * db;
  };
  // Strict comparisons in priority order implement the tie rule.
  TrendLabel best = TrendLabel::kFlat;
  double best_d = dist2(palette.black);
  if (const double d = dist2(palette.red); d < best_d) {
    best = TrendLabel::kUp;
    best_d = d;
  }
  if (const double d = dist2(palette.blue); d < best_d) best = TrendLabel::kDown;
  return best;
}

ConfusionMatrix confusion(const std::vector<TrendLabel>& predicted, const std::vector<TrendLabel>& actual) {
  if (predicted.size() != actual.size()) {
    throw ArgumentError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(actual.size()) + " labels");
  }
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < actual.size(); ++i) ++m[label_index(actual[i])][label_index(predicted[i])];
  return m;
}

std::int64_t percent_hundredths(std::int64_t num, std::int64_t den) {
  if (den == 0) return 0;
  const std::int64_t scaled = num * 10000;
  std::int64_t q = scaled / den;
  const std::int64_t rem = scaled % den;
  if (2 * rem >= den) ++q;
  return q;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& matrix) {
  MetricsReport report;
  report.matrix = matrix;
  for (int c = 0; c < 3; ++c) {
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (int k = 0; k < 3; ++k) {
      if (matrix[c][k] < 0) throw ArgumentError("confusion matrix entries must be non-negative");
      row += matrix[c][k];
      col += matrix[k][c];
    }
    const std::int64_t tp = matrix[c][c];
    ClassMetrics& m = report.per_class[static_cast<std::size_t>(c)];
    m.support = row;
    m.precision_bp = percent_hundredths(tp, col);
    m.recall_bp = percent_hundredths(tp, row);
    // Harmonic mean of tp/col and tp/row, which reduces to 2tp / (row + col).
    m.f1_bp = percent_hundredths(2 * tp, row + col);
    report.correct += tp;
    report.total += row;
  }
  report.accuracy_bp = percent_hundredths(report.correct, report.total);
  return report;
}

std::string MetricsReport::format_table() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %14s %11s %13s %8s\n", "Category", "Precision (%)", "Recall (%)",
                "F1-Score (%)", "Support");
  out += line;
  for (int c = 0; c < 3; ++c) {
    const ClassMetrics& m = per_class[static_cast<std::size_t>(c)];
    std::snprintf(line, sizeof line, "%-12s %14.2f %11.2f %13.2f %8lld\n",
                  std::string(color_name(kLabelOrder[static_cast<std::size_t>(c)])).c_str(), m.precision(),
                  m.recall(), m.f1(), static_cast<long long>(m.support));
    out += line;
  }
  std::snprintf(line, sizeof line, "%-12s %.2f%% (%lld/%lld)\n\n", "Overall Acc.", accuracy(),
                static_cast<long long>(correct), static_cast<long long>(total));
  out += line;
  std::snprintf(line, sizeof line, "%-10s %8s %8s %8s\n", "", "P. blue", "P. red", "P. black");
  out += line;
  for (int a = 0; a < 3; ++a) {
    const std::string name = "A. " + std::string(color_name(kLabelOrder[static_cast<std::size_t>(a)]));
    std::snprintf(line, sizeof line, "%-10s %8lld %8lld %8lld\n", name.c_str(), static_cast<long long>(matrix[a][0]),
                  static_cast<long long>(matrix[a][1]), static_cast<long long>(matrix[a][2]));
    out += line;
  }
  return out;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  nlohmann::json classes = nlohmann::json::object();
  for (std::size_t c = 0; c < 3; ++c) {
    const ClassMetrics& m = r.per_class[c];
    classes[std::string(color_name(kLabelOrder[c]))] = {
        {"precision", m.precision()}, {"recall", m.recall()}, {"f1", m.f1()}, {"support", m.support}};
  }
  nlohmann::json matrix = nlohmann::json::array();
  for (const auto& row : r.matrix) matrix.push_back(row);
  j = {{"classes", classes},
       {"confusion", matrix},
       {"confusion_order", {"blue", "red", "black"}},
       {"accuracy", r.accuracy()},
       {"correct", r.correct},
       {"total", r.total}};
}

std::filesystem::path generated_image_path(const std::filesystem::path& generated_dir, const ManifestRecord& record) {
  return generated_dir / std::filesystem::path(record.edited_path).filename();
}

EvaluationRun evaluate_run(const Manifest& manifest, const std::filesystem::path& generated_dir,
                           const ChartStyle& style) {
  std::string missing;
  std::size_t missing_count = 0;
  for (const auto& record : manifest.records) {
    if (!std::filesystem::exists(generated_image_path(generated_dir, record))) {
      if (missing_count < 20) missing += (missing.empty() ? "" : ", ") + std::to_string(record.n);
      ++missing_count;
    }
  }
  if (missing_count > 0) {
    throw IoError(generated_dir.string(), std::to_string(missing_count) +
                                              " generated image(s) missing for record ids: " + missing +
                                              (missing_count > 20 ? ", ..." : ""));
  }

  EvaluationRun run;
  std::vector<TrendLabel> predicted;
  std::vector<TrendLabel> actual;
  for (const auto& record : manifest.records) {
    const RgbImage image = read_png(generated_image_path(generated_dir, record));
    SampleResult sample;
    sample.n = record.n;
    sample.actual = record.label;
    sample.mean = read_mark(image, style);
    sample.predicted = classify_mark(sample.mean, style.palette);
    predicted.push_back(sample.predicted);
    actual.push_back(sample.actual);
    run.samples.push_back(sample);
  }
  run.report = metrics_from_confusion(confusion(predicted, actual));
  return run;
}

void write_evaluation(const EvaluationRun& run, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string(), "cannot create directory: " + ec.message());

  const auto csv_path = out_dir / "samples.csv";
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError(csv_path.string(), "cannot open for writing");
  csv << "n,actual,predicted,mean_r,mean_g,mean_b\n";
  char buffer[160];
  for (const auto& s : run.samples) {
    std::snprintf(buffer, sizeof buffer, "%zu,%s,%s,%.4f,%.4f,%.4f\n", s.n, std::string(color_name(s.actual)).c_str(),
                  std::string(color_name(s.predicted)).c_str(), s.mean.r, s.mean.g, s.mean.b);
    csv << buffer;
  }
  if (!csv.flush()) throw IoError(csv_path.string(), "write failed");

  const auto json_path = out_dir / "metrics.json";
  std::ofstream json_out(json_path, std::ios::binary | std::ios::trunc);
  if (!json_out) throw IoError(json_path.string(), "cannot open for writing");
  json_out << nlohmann::json(run.report).dump(2) << '\n';
  if (!json_out.flush()) throw IoError(json_path.string(), "write failed");

  const auto txt_path = out_dir / "metrics.txt";
  std::ofstream txt(txt_path, std::ios::binary | std::ios::trunc);
  if (!txt) throw IoError(txt_path.string(), "cannot open for writing");
  txt << run.report.format_table();
  if (!txt.flush()) throw IoError(txt_path.string(), "write failed");
}

}  // namespace candleforge
