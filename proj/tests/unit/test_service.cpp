#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "candleforge/evaluation.hpp"
#include "candleforge/service.hpp"
#include "candleforge/time_util.hpp"
#include "httplib.h"
#include "oracles.hpp"
#include "support.hpp"

using namespace candleforge;
using nlohmann::json;

namespace {

struct Harness {
  cftest::TempDir tmp;
  RunConfig config;
  std::unique_ptr<ScenarioService> service;
  int port = 0;

  explicit Harness(int workers = 2, int queue = 8) {
    config.style = ChartStyle::for_size(64, 64);
    config.paths.results_dir = tmp.path / "results";
    config.service.static_dir = tmp.path / "www";
    config.service.workers = workers;
    config.service.queue_capacity = queue;
    config.sampler.steps = 3;
    std::filesystem::create_directories(config.service.static_dir);
    std::ofstream(config.service.static_dir / "index.html") << "<html>ok</html>";

    diffusion::UNetConfig unet;
    unet.base_channels = 8;
    unet.groups = 4;
    unet.time_dim = 8;
    unet.embed_dim = 16;
    unet.condition.dim = 8;
    diffusion::Denoiser<float> model(unet);
    model.initialize(5);
    diffusion::CheckpointMeta meta;
    meta.unet = unet;
    meta.image_width = meta.image_height = 64;

    const auto full = read_candles(cftest::fixture_csv(), {"BTCUSDT", kFourHoursMs});
    service = std::make_unique<ScenarioService>(config, full.slice(0, 300),
                                                diffusion::LoadedCheckpoint{meta, std::move(model)});
    port = service->start("127.0.0.1", 0);
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

httplib::Result post(const Harness& h, const json& body) {
  return h.client().Post("/api/scenarios", body.dump(), "application/json");
}

}  // namespace

TEST(Service, HealthStaticAndMetrics) {
  Harness h;
  auto c = h.client();
  EXPECT_EQ(c.Get("/api/health")->status, 200);
  const auto index = c.Get("/index.html");
  ASSERT_TRUE(index);
  EXPECT_EQ(index->body, "<html>ok</html>");
  EXPECT_EQ(c.Get("/")->status, 200);

  auto missing = c.Get("/api/metrics");
  EXPECT_EQ(missing->status, 404);
  EXPECT_TRUE(json::parse(missing->body).contains("error"));
  std::filesystem::create_directories(h.config.paths.results_dir);
  std::ofstream(h.config.paths.results_dir / "metrics.json") << R"({"accuracy":50})";
  EXPECT_EQ(json::parse(c.Get("/api/metrics")->body)["accuracy"], 50);
}

TEST(Service, WindowListing) {
  Harness h;
  auto c = h.client();
  const auto all = json::parse(c.Get("/api/windows?page_size=1000")->body);
  EnumerationOptions o;
  o.lookahead = 0;
  EXPECT_EQ(all["total"].get<std::size_t>(), cftest::brute_force_pair_count(300, o));
  EXPECT_EQ(all["windows"].size(), all["total"].get<std::size_t>());
  const auto& first = all["windows"][0];
  EXPECT_EQ(first["id"], 128);
  EXPECT_TRUE(first["has_ground_truth"].get<bool>());
  EXPECT_FALSE(all["windows"].back()["has_ground_truth"].get<bool>());
  std::int64_t prev = 0;
  for (const auto& w : all["windows"]) {
    const auto t = parse_timestamp(w["open_time"].get<std::string>());
    EXPECT_GT(t, prev);
    prev = t;
  }

  const auto page2 = json::parse(c.Get("/api/windows?page=2&page_size=10")->body);
  EXPECT_EQ(page2["windows"][0]["id"], all["windows"][10]["id"]);

  const auto empty = c.Get("/api/windows?from=2030-01-01&to=2030-02-01");
  EXPECT_EQ(empty->status, 200);
  EXPECT_TRUE(json::parse(empty->body)["windows"].empty());

  EXPECT_EQ(c.Get("/api/windows?from=yesterday")->status, 400);
  EXPECT_EQ(c.Get("/api/windows?page=0")->status, 400);
  EXPECT_EQ(c.Get("/api/windows?from=2024-03-01&to=2024-02-01")->status, 400);

  const auto png = c.Get("/api/windows/128/chart.png");
  ASSERT_EQ(png->status, 200);
  const auto img = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(png->body.data()), png->body.size()));
  EXPECT_EQ(img.width(), 64);
  EXPECT_EQ(c.Get("/api/windows/5/chart.png")->status, 404);
}

TEST(Service, ScenarioGeneration) {
  Harness h;
  auto c = h.client();
  const auto r1 = post(h, {{"window_id", 150}, {"rsi_override", 100}, {"seed", 42}});
  ASSERT_EQ(r1->status, 200) << r1->body;
  const auto a = json::parse(r1->body);
  EXPECT_EQ(a["seed"], 42);
  EXPECT_EQ(a["prompt"].get<std::string>().rfind("Predict next candle, RSI is 100.00, MACD is ", 0), 0u);
  EXPECT_EQ(a["steps"], 3);
  EXPECT_TRUE(a.contains("ground_truth_label"));

  const auto image = c.Get(a["image_url"].get<std::string>());
  ASSERT_EQ(image->status, 200);
  const auto decoded =
      decode_png(std::span(reinterpret_cast<const std::uint8_t*>(image->body.data()), image->body.size()));
  const auto label = classify_mark(read_mark(decoded, h.config.style), h.config.style.palette);
  EXPECT_EQ(a["predicted_color"], std::string(color_name(label)));

  const auto b = json::parse(post(h, {{"window_id", 150}, {"rsi_override", 100}, {"seed", 42}})->body);
  EXPECT_EQ(b["scenario_id"], a["scenario_id"]);
  EXPECT_TRUE(b["cached"].get<bool>());
  EXPECT_EQ(c.Get(b["image_url"].get<std::string>())->body, image->body);

  const auto unseeded = json::parse(post(h, {{"window_id", 150}})->body);
  EXPECT_TRUE(unseeded["seed"].is_number_unsigned());
  const auto last = json::parse(c.Get("/api/windows?page_size=1000")->body)["windows"].back()["id"];
  EXPECT_FALSE(json::parse(post(h, {{"window_id", last}, {"seed", 1}})->body).contains("ground_truth_label"));
}

TEST(Service, ScenarioErrors) {
  Harness h;
  EXPECT_EQ(post(h, {{"window_id", 150}, {"rsi_override", 150}})->status, 422);
  EXPECT_EQ(post(h, {{"window_id", 150}, {"steps", 0}})->status, 422);
  EXPECT_EQ(post(h, {{"window_id", "x"}})->status, 422);
  EXPECT_EQ(post(h, {{"rsi_override", 20}})->status, 422);
  EXPECT_EQ(post(h, {{"window_id", 2}})->status, 404);
  const auto bad = h.client().Post("/api/scenarios", "{not json", "application/json");
  EXPECT_EQ(bad->status, 400);
  const auto err = json::parse(bad->body)["error"];
  EXPECT_TRUE(err.contains("code"));
  EXPECT_TRUE(err.contains("message"));
  EXPECT_EQ(h.client().Get("/api/images/abc.png")->status, 404);
}

TEST(Service, ConcurrentIdenticalRequestsAgree) {
  Harness h;
  std::vector<std::string> ids(4), images(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      const auto r = post(h, {{"window_id", 200}, {"seed", 7}, {"steps", 5}});
      if (!r || r->status != 200) return;
      ids[i] = json::parse(r->body)["scenario_id"];
      images[i] = h.client().Get("/api/images/" + ids[i] + ".png")->body;
    });
  }
  for (auto& t : threads) t.join();
  for (int i = 1; i < 4; ++i) {
    EXPECT_EQ(ids[i], ids[0]);
    EXPECT_EQ(images[i], images[0]);
  }
  EXPECT_FALSE(images[0].empty());

  ScenarioRequest direct;
  direct.window_id = 200;
  direct.seed = 7;
  direct.steps = 5;
  EXPECT_EQ(*h.service->image_png(h.service->generate(direct).scenario_id), std::vector<std::uint8_t>(images[0].begin(), images[0].end()));
}

TEST(Service, SaturatedPoolReturns429) {
  Harness h(1, 0);
  std::atomic<int> ok{0}, busy{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      const auto r = post(h, {{"window_id", 200}, {"seed", 100 + i}, {"steps", 300}});
      if (r && r->status == 200) ++ok;
      if (r && r->status == 429) {
        EXPECT_EQ(json::parse(r->body)["error"]["code"], "busy");
        ++busy;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_GE(ok.load(), 1);
  EXPECT_GE(busy.load(), 1);
}

TEST(Service, RequestParsing) {
  const auto r = parse_scenario_request(R"({"window_id": 3, "macd_override": -1.5, "image_guidance": 1.5})");
  EXPECT_EQ(r.window_id, 3u);
  EXPECT_DOUBLE_EQ(*r.macd_override, -1.5);
  EXPECT_DOUBLE_EQ(*r.image_guidance, 1.5);
  EXPECT_FALSE(r.seed);
  try {
    parse_scenario_request("[]");
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 400);
  }
  try {
    parse_scenario_request(R"({"window_id": -1})");
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 422);
  }
}
