#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/dataset.hpp"
#include "candleforge/diffusion/sampler.hpp"
#include "candleforge/diffusion/training.hpp"
#include "candleforge/diffusion/unet.hpp"
#include "candleforge/market_data.hpp"

namespace candleforge {

struct DataConfig {
  std::string symbol = "BTCUSDT";
  std::string interval = "4h";
  std::string train_start = "2024-01-01";
  std::string train_end = "2025-03-01";  // exclusive
  std::string eval_start = "2025-03-17";
  std::string eval_end = "2025-08-01";  // exclusive
  std::string mode = "fixture";         // fixture | live
  std::string market = "futures";       // futures | spot
  std::string fixture_dir;
  std::string api_base;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct DatasetConfig {
  std::size_t window_len = kDefaultWindowLen;
  std::size_t lookahead = kDefaultLookahead;
  double threshold = kDefaultThreshold;
  std::string train_warmup = "in_sample";   // in_sample | prefetched
  std::string eval_warmup = "prefetched";
  bool bridge_gaps = false;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ModelConfig {
  diffusion::UNetConfig unet;
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::uint64_t codec_seed = 0x5eed;
  diffusion::AdamConfig adam;
  diffusion::GuidanceDropout dropout;
  int train_steps = 500;
  int batch_size = 8;
  std::size_t max_examples = 0;  // 0 = every manifest record

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.unet == b.unet && a.schedule_steps == b.schedule_steps && a.beta_start == b.beta_start &&
           a.beta_end == b.beta_end && a.codec_seed == b.codec_seed && a.adam.learning_rate == b.adam.learning_rate &&
           a.adam.beta1 == b.adam.beta1 && a.adam.beta2 == b.adam.beta2 && a.adam.epsilon == b.adam.epsilon &&
           a.dropout.text_only == b.dropout.text_only && a.dropout.image_only == b.dropout.image_only &&
           a.dropout.both == b.dropout.both && a.train_steps == b.train_steps && a.batch_size == b.batch_size &&
           a.max_examples == b.max_examples;
  }
};

struct SamplerSettings {
  int steps = 20;
  double text_guidance = 2.0;
  double image_guidance = 1.0;

  friend bool operator==(const SamplerSettings&, const SamplerSettings&) = default;
};

struct PathsConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path dataset_dir = "dataset";
  std::filesystem::path checkpoint = "model/model.cfck";
  std::filesystem::path results_dir = "results";

  friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;
  int workers = 2;
  int queue_capacity = 8;
  std::filesystem::path static_dir;

  friend bool operator==(const ServiceConfig&, const ServiceConfig&) = default;
};

struct RunConfig {
  std::uint64_t seed = 2024;
  DataConfig data;
  ChartStyle style;
  DatasetConfig dataset;
  ModelConfig model;
  SamplerSettings sampler;
  PathsConfig paths;
  ServiceConfig service;

  // Throws ConfigError describing the first invalid field.
  void validate() const;

  // Relative paths in `paths`, `data.fixture_dir` and `service.static_dir` are resolved
  // against `base`.
  void resolve_paths(const std::filesystem::path& base);

  DataSourceConfig data_source(bool offline) const;
  EnumerationOptions enumeration(bool eval) const;
  diffusion::NoiseSchedule schedule() const;
  diffusion::SamplerConfig sampler_config(std::uint64_t seed) const;
  std::int64_t interval_ms() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// INI text: `[section]` headers with `key = value` lines. Unknown sections or keys, and
// values that do not parse, raise ConfigError. Missing keys keep their defaults.
RunConfig parse_run_config(const std::string& text);
// Reads the file, parses it and resolves relative paths against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& config);

}  // namespace candleforge
