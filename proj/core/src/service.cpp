#include "candleforge/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/dataset.hpp"
#include "candleforge/diffusion/codec.hpp"
#include "candleforge/evaluation.hpp"
#include "candleforge/image.hpp"
#include "candleforge/pipeline.hpp"
#include "candleforge/time_util.hpp"
#include "httplib.h"

namespace candleforge {
namespace {

using nlohmann::json;

// Fixed worker threads with a bounded number of outstanding jobs.
class BoundedPool {
 public:
  BoundedPool(int workers, int queue_capacity) : limit_(static_cast<std::size_t>(workers + queue_capacity)) {
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
  }

  ~BoundedPool() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  // False when the pool is saturated.
  bool try_submit(std::function<void()> job) {
    {
      std::lock_guard lock(mu_);
      if (outstanding_ >= limit_) return false;
      ++outstanding_;
      jobs_.push_back(std::move(job));
    }
    cv_.notify_one();
    return true;
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
      std::lock_guard lock(mu_);
      --outstanding_;
    }
  }

  std::size_t limit_;
  std::size_t outstanding_ = 0;
  bool stopping_ = false;
  std::deque<std::function<void()>> jobs_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::thread> threads_;
};

struct StoredScenario {
  ScenarioResult result;
  std::vector<std::uint8_t> png;
};

std::string error_body(const std::string& code, const std::string& message) {
  return json{{"error", {{"code", code}, {"message", message}}}}.dump();
}

std::string number_key(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::int64_t parse_time_param(const std::string& value, const char* name) {
  try {
    return parse_timestamp(value);
  } catch (const Error& e) {
    throw ServiceError(400, "bad_request", std::string("invalid '") + name + "': " + e.what());
  }
}

std::size_t parse_count_param(const std::string& value, const char* name, std::size_t lo, std::size_t hi) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty() || out < lo || out > hi) {
    throw ServiceError(400, "bad_request",
                       std::string("'") + name + "' must be an integer in [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "]");
  }
  return out;
}

}  // namespace

ScenarioRequest parse_scenario_request(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ServiceError(400, "bad_request", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ServiceError(400, "bad_request", "request body must be a JSON object");
  const auto invalid = [](const std::string& field, const char* expected) {
    return ServiceError(422, "invalid_request", "'" + field + "' must be " + expected);
  };
  ScenarioRequest req;
  if (!j.contains("window_id")) throw ServiceError(422, "invalid_request", "'window_id' is required");
  if (!j["window_id"].is_number_unsigned()) throw invalid("window_id", "a non-negative integer");
  req.window_id = j["window_id"].get<std::size_t>();
  const auto number = [&](const char* field) -> std::optional<double> {
    if (!j.contains(field) || j[field].is_null()) return std::nullopt;
    if (!j[field].is_number()) throw invalid(field, "a number");
    return j[field].get<double>();
  };
  req.rsi_override = number("rsi_override");
  req.macd_override = number("macd_override");
  req.text_guidance = number("text_guidance");
  req.image_guidance = number("image_guidance");
  if (j.contains("seed") && !j["seed"].is_null()) {
    if (!j["seed"].is_number_unsigned()) throw invalid("seed", "a non-negative integer");
    req.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("steps") && !j["steps"].is_null()) {
    if (!j["steps"].is_number_integer()) throw invalid("steps", "an integer");
    req.steps = j["steps"].get<int>();
  }
  return req;
}

std::string scenario_result_json(const ScenarioResult& r) {
  json j = {{"scenario_id", r.scenario_id},
            {"image_url", "/api/images/" + r.scenario_id + ".png"},
            {"window_id", r.window_id},
            {"prompt", r.prompt},
            {"seed", r.seed},
            {"steps", r.steps},
            {"text_guidance", r.text_guidance},
            {"image_guidance", r.image_guidance},
            {"predicted_label", direction_name(r.predicted)},
            {"predicted_color", color_name(r.predicted)},
            {"cached", r.cached}};
  if (r.ground_truth) {
    j["ground_truth_label"] = direction_name(*r.ground_truth);
    j["ground_truth_color"] = color_name(*r.ground_truth);
  }
  return j.dump();
}

struct ScenarioService::Impl {
  RunConfig config;
  CandleSeries series;
  IndicatorFrame frame;
  diffusion::LoadedCheckpoint checkpoint;
  BoundedPool pool;

  mutable std::shared_mutex store_mu;
  std::map<std::string, StoredScenario> store;
  std::mutex seed_mu;
  std::uint64_t seed_counter = 0;

  httplib::Server server;
  std::thread server_thread;

  Impl(RunConfig c, CandleSeries s, diffusion::LoadedCheckpoint ck)
      : config(std::move(c)),
        series(std::move(s)),
        frame(indicator_frame(series)),
        checkpoint(std::move(ck)),
        pool(config.service.workers, config.service.queue_capacity) {}

  bool has_ground_truth(std::size_t n) const {
    const std::size_t ahead = n + config.dataset.lookahead;
    if (ahead >= series.size()) return false;
    return config.dataset.bridge_gaps ||
           series[ahead].open_time - series[n].open_time ==
               static_cast<std::int64_t>(config.dataset.lookahead) * series.interval_ms();
  }
};

ScenarioService::ScenarioService(RunConfig config, CandleSeries series, diffusion::LoadedCheckpoint checkpoint)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(series), std::move(checkpoint))) {
  EnumerationOptions opts = impl_->config.enumeration(false);
  opts.lookahead = 0;
  opts.warmup = WarmupMode::kInSample;
  windows_ = enumerate_pair_indices(impl_->series, impl_->frame, opts);
}

ScenarioService::~ScenarioService() { stop(); }

WindowPage ScenarioService::list_windows(const WindowQuery& query) const {
  if (query.page < 1 || query.page_size < 1) throw ServiceError(400, "bad_request", "page and page_size start at 1");
  if (query.from && query.to && *query.from > *query.to) {
    throw ServiceError(400, "bad_request", "'from' must not be after 'to'");
  }
  std::vector<std::size_t> selected;
  for (std::size_t n : windows_) {
    const std::int64_t t = impl_->series[n].open_time;
    if (query.from && t < *query.from) continue;
    if (query.to && t >= *query.to) continue;
    selected.push_back(n);
  }
  WindowPage page;
  page.total = selected.size();
  page.page = query.page;
  page.page_size = query.page_size;
  const std::size_t begin = std::min(selected.size(), (query.page - 1) * query.page_size);
  const std::size_t end = std::min(selected.size(), begin + query.page_size);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t n = selected[i];
    WindowSummary w;
    w.id = n;
    w.open_time = impl_->series[n].open_time;
    w.close = impl_->series[n].close.text();
    w.rsi = round2(*impl_->frame.rsi14[n]);
    w.macd = round2(*impl_->frame.macd_line[n]);
    w.has_ground_truth = impl_->has_ground_truth(n);
    page.windows.push_back(std::move(w));
  }
  return page;
}

std::vector<std::uint8_t> ScenarioService::chart_png(std::size_t window_id) const {
  if (!std::binary_search(windows_.begin(), windows_.end(), window_id)) {
    throw ServiceError(404, "not_found", "unknown window " + std::to_string(window_id));
  }
  const auto window = make_window(impl_->series, impl_->frame, window_id, impl_->config.dataset.window_len);
  return encode_png(render_window(window, std::nullopt, impl_->config.style).pixels);
}

ScenarioResult ScenarioService::generate(const ScenarioRequest& req) {
  Impl& s = *impl_;
  if (!std::binary_search(windows_.begin(), windows_.end(), req.window_id)) {
    throw ServiceError(404, "not_found", "unknown window " + std::to_string(req.window_id));
  }
  if (req.rsi_override && (!std::isfinite(*req.rsi_override) || *req.rsi_override < 0.0 || *req.rsi_override > 100.0)) {
    throw ServiceError(422, "invalid_request", "rsi_override must lie in [0, 100]");
  }
  if (req.macd_override && !std::isfinite(*req.macd_override)) {
    throw ServiceError(422, "invalid_request", "macd_override must be finite");
  }
  diffusion::SamplerConfig sampler = s.config.sampler_config(0);
  if (req.steps) sampler.steps = *req.steps;
  if (req.text_guidance) sampler.text_guidance = *req.text_guidance;
  if (req.image_guidance) sampler.image_guidance = *req.image_guidance;
  if (sampler.steps < 1 || sampler.steps > s.checkpoint.meta.schedule_steps) {
    throw ServiceError(422, "invalid_request",
                       "steps must lie in [1, " + std::to_string(s.checkpoint.meta.schedule_steps) + "]");
  }
  if (!std::isfinite(sampler.text_guidance) || !std::isfinite(sampler.image_guidance)) {
    throw ServiceError(422, "invalid_request", "guidance scales must be finite");
  }
  if (req.seed) {
    sampler.seed = *req.seed;
  } else {
    std::lock_guard lock(s.seed_mu);
    sampler.seed = derive_seed(s.config.seed, "scenario/" + std::to_string(s.seed_counter++));
  }

  const std::size_t n = req.window_id;
  const std::string prompt = format_prompt(req.rsi_override.value_or(*s.frame.rsi14[n]),
                                           req.macd_override.value_or(*s.frame.macd_line[n]));
  const std::string key = "window=" + std::to_string(n) + ";prompt=" + prompt + ";seed=" + std::to_string(sampler.seed) +
                          ";steps=" + std::to_string(sampler.steps) + ";s_t=" + number_key(sampler.text_guidance) +
                          ";s_i=" + number_key(sampler.image_guidance);
  const std::string id = sha256_hex(key).substr(0, 24);
  {
    std::shared_lock lock(s.store_mu);
    if (auto it = s.store.find(id); it != s.store.end()) {
      ScenarioResult hit = it->second.result;
      hit.cached = true;
      return hit;
    }
  }

  WindowScenario scenario{n, req.rsi_override, req.macd_override, sampler.seed};
  std::packaged_task<WindowGeneration()> task(
      [&s, scenario, sampler] { return generate_for_window(s.config, s.checkpoint, s.series, s.frame, scenario, sampler); });
  auto future = task.get_future();
  auto shared = std::make_shared<std::packaged_task<WindowGeneration()>>(std::move(task));
  if (!s.pool.try_submit([shared] { (*shared)(); })) {
    throw ServiceError(429, "busy", "generation queue is full; retry later");
  }
  WindowGeneration gen = future.get();

  StoredScenario stored;
  stored.png = encode_png(gen.generated);
  ScenarioResult& r = stored.result;
  r.scenario_id = id;
  r.window_id = n;
  r.prompt = gen.prompt;
  r.seed = sampler.seed;
  r.steps = sampler.steps;
  r.text_guidance = sampler.text_guidance;
  r.image_guidance = sampler.image_guidance;
  // label from the stored bytes, never from a second path
  r.predicted = classify_mark(read_mark(decode_png(stored.png), s.config.style), s.config.style.palette);
  r.ground_truth = gen.ground_truth;

  std::unique_lock lock(s.store_mu);
  const auto [it, inserted] = s.store.emplace(id, std::move(stored));
  ScenarioResult out = it->second.result;
  out.cached = !inserted;
  return out;
}

std::optional<std::vector<std::uint8_t>> ScenarioService::image_png(const std::string& scenario_id) const {
  std::shared_lock lock(impl_->store_mu);
  const auto it = impl_->store.find(scenario_id);
  if (it == impl_->store.end()) return std::nullopt;
  return it->second.png;
}

namespace {

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    res.status = e.status();
    res.set_content(error_body(e.code(), e.what()), "application/json");
  } catch (const ArgumentError& e) {
    res.status = 422;
    res.set_content(error_body("invalid_request", e.what()), "application/json");
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    res.status = 500;
    res.set_content(error_body("internal", e.what()), "application/json");
  }
}

std::string png_string(const std::vector<std::uint8_t>& bytes) {
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace

int ScenarioService::start(const std::string& host, int port) {
  httplib::Server& srv = impl_->server;

  srv.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });

  srv.Get("/api/windows", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      WindowQuery q;
      if (req.has_param("from")) q.from = parse_time_param(req.get_param_value("from"), "from");
      if (req.has_param("to")) q.to = parse_time_param(req.get_param_value("to"), "to");
      if (req.has_param("page")) q.page = parse_count_param(req.get_param_value("page"), "page", 1, 1'000'000);
      if (req.has_param("page_size")) {
        q.page_size = parse_count_param(req.get_param_value("page_size"), "page_size", 1, 1000);
      }
      const WindowPage page = list_windows(q);
      json windows = json::array();
      for (const auto& w : page.windows) {
        windows.push_back({{"id", w.id},
                           {"open_time", format_timestamp(w.open_time)},
                           {"close", w.close},
                           {"rsi", w.rsi},
                           {"macd", w.macd},
                           {"has_ground_truth", w.has_ground_truth}});
      }
      res.set_content(
          json{{"windows", windows}, {"total", page.total}, {"page", page.page}, {"page_size", page.page_size}}.dump(),
          "application/json");
    });
  });

  srv.Get(R"(/api/windows/(\d+)/chart\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::size_t id = 0;
      const std::string m = req.matches[1];
      const auto [ptr, ec] = std::from_chars(m.data(), m.data() + m.size(), id);
      if (ec != std::errc()) throw ServiceError(404, "not_found", "unknown window");
      res.set_content(png_string(chart_png(id)), "image/png");
    });
  });

  srv.Post("/api/scenarios", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(scenario_result_json(generate(parse_scenario_request(req.body))), "application/json"); });
  });

  srv.Get(R"(/api/images/([0-9a-f]+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto png = image_png(req.matches[1]);
      if (!png) throw ServiceError(404, "not_found", "unknown scenario");
      res.set_content(png_string(*png), "image/png");
    });
  });

  srv.Get("/api/metrics", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      const auto path = impl_->config.paths.results_dir / "metrics.json";
      if (!std::filesystem::exists(path)) throw ServiceError(404, "not_found", "no evaluation has been run");
      const auto bytes = read_file_bytes(path);
      res.set_content(std::string(bytes.begin(), bytes.end()), "application/json");
    });
  });

  const auto& static_dir = impl_->config.service.static_dir;
  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) srv.set_mount_point("/", static_dir.string());

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(error_body(res.status == 404 ? "not_found" : "error", httplib::status_message(res.status)),
                      "application/json");
    }
  });

  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError(host + ":" + std::to_string(port), "cannot bind");
  impl_->server_thread = std::thread([&srv] { srv.listen_after_bind(); });
  spdlog::info("serving {} windows on http://{}:{}", windows_.size(), host, bound);
  return bound;
}

void ScenarioService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

void ScenarioService::serve(const std::string& host, int port) {
  start(host, port);
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

}  // namespace candleforge
