#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "candleforge/config.hpp"
#include "candleforge/diffusion/checkpoint.hpp"
#include "candleforge/error.hpp"
#include "candleforge/indicators.hpp"
#include "candleforge/market_data.hpp"
#include "candleforge/trend_label.hpp"

namespace candleforge {

// Request failure carrying its HTTP status and a machine-readable code.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : Error(message), status_(status), code_(std::move(code)) {}

  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

struct WindowQuery {
  std::optional<std::int64_t> from;  // inclusive open time of the window's last bar
  std::optional<std::int64_t> to;    // exclusive
  std::size_t page = 1;
  std::size_t page_size = 100;
};

struct WindowSummary {
  std::size_t id = 0;
  std::int64_t open_time = 0;
  std::string close;
  double rsi = 0.0;
  double macd = 0.0;
  bool has_ground_truth = false;
};

struct WindowPage {
  std::vector<WindowSummary> windows;
  std::size_t total = 0;
  std::size_t page = 1;
  std::size_t page_size = 100;
};

struct ScenarioRequest {
  std::size_t window_id = 0;
  std::optional<double> rsi_override;
  std::optional<double> macd_override;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<double> text_guidance;
  std::optional<double> image_guidance;
};

struct ScenarioResult {
  std::string scenario_id;
  std::size_t window_id = 0;
  std::string prompt;
  std::uint64_t seed = 0;
  int steps = 0;
  double text_guidance = 0.0;
  double image_guidance = 0.0;
  TrendLabel predicted = TrendLabel::kFlat;
  std::optional<TrendLabel> ground_truth;
  bool cached = false;
};

// JSON request parsing shared by the HTTP layer and tests. Throws ServiceError (400 for
// malformed JSON, 422 for wrong field types).
ScenarioRequest parse_scenario_request(const std::string& body);
std::string scenario_result_json(const ScenarioResult& result);

class ScenarioService {
 public:
  // `series` and the checkpoint are immutable after construction.
  ScenarioService(RunConfig config, CandleSeries series, diffusion::LoadedCheckpoint checkpoint);
  ~ScenarioService();

  ScenarioService(const ScenarioService&) = delete;
  ScenarioService& operator=(const ScenarioService&) = delete;

  const std::vector<std::size_t>& window_ids() const noexcept { return windows_; }

  WindowPage list_windows(const WindowQuery& query) const;
  std::vector<std::uint8_t> chart_png(std::size_t window_id) const;

  // Runs on the bounded worker pool; 429 when it is saturated. Identical requests (including
  // the seed) return the stored scenario.
  ScenarioResult generate(const ScenarioRequest& request);
  std::optional<std::vector<std::uint8_t>> image_png(const std::string& scenario_id) const;

  // HTTP front end. `start` binds (port 0 picks a free port), serves on a background thread
  // and returns the bound port; `stop` shuts it down.
  int start(const std::string& host, int port);
  void stop();
  // Blocks until stopped.
  void serve(const std::string& host, int port);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::vector<std::size_t> windows_;
};

}  // namespace candleforge
