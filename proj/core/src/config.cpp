#include "candleforge/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "candleforge/diffusion/codec.hpp"
#include "candleforge/error.hpp"
#include "candleforge/time_util.hpp"

namespace candleforge {
namespace {

namespace pt = boost::property_tree;

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string where(const Field& f) { return std::string(f.section) + "." + f.key; }

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& text, const char* what) {
  N value{};
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(std::string(what) + ": cannot parse '" + text + "'");
  }
  return value;
}

template <typename N>
std::string format_number(N value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& text, const char* what) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(std::string(what) + ": expected true or false, got '" + text + "'");
}

Rgb parse_rgb(const std::string& text, const char* what) {
  std::stringstream ss(text);
  std::string part;
  int values[3];
  int count = 0;
  while (std::getline(ss, part, ',')) {
    if (count == 3) throw ConfigError(std::string(what) + ": expected r,g,b");
    values[count] = parse_number<int>(part, what);
    if (values[count] < 0 || values[count] > 255) throw ConfigError(std::string(what) + ": channel out of range");
    ++count;
  }
  if (count != 3) throw ConfigError(std::string(what) + ": expected r,g,b");
  return {static_cast<std::uint8_t>(values[0]), static_cast<std::uint8_t>(values[1]), static_cast<std::uint8_t>(values[2])};
}

std::string format_rgb(const Rgb& c) {
  return std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b);
}

template <typename N, typename Access>
Field number(const char* section, const char* key, Access access) {
  return {section, key,
          [=](RunConfig& c, const std::string& v) { access(c) = parse_number<N>(v, key); },
          [=](const RunConfig& c) { return format_number<N>(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field text(const char* section, const char* key, Access access) {
  return {section, key, [=](RunConfig& c, const std::string& v) { access(c) = trim(v); },
          [=](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field path(const char* section, const char* key, Access access) {
  return {section, key, [=](RunConfig& c, const std::string& v) { access(c) = trim(v); },
          [=](const RunConfig& c) { return access(const_cast<RunConfig&>(c)).generic_string(); }};
}

template <typename Access>
Field flag(const char* section, const char* key, Access access) {
  return {section, key, [=](RunConfig& c, const std::string& v) { access(c) = parse_bool(v, key); },
          [=](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Access>
Field color(const char* section, const char* key, Access access) {
  return {section, key, [=](RunConfig& c, const std::string& v) { access(c) = parse_rgb(v, key); },
          [=](const RunConfig& c) { return format_rgb(access(const_cast<RunConfig&>(c))); }};
}

// Changing the canvas size rescales the default geometry; explicit geometry keys are applied after.
Field canvas(const char* key, bool is_width) {
  return {"style", key,
          [=](RunConfig& c, const std::string& v) {
            const int value = parse_number<int>(v, key);
            const ChartStyle scaled = ChartStyle::for_size(is_width ? value : c.style.width,
                                                           is_width ? c.style.height : value);
            ChartStyle& s = c.style;
            s.width = scaled.width;
            s.height = scaled.height;
            s.margin_left = scaled.margin_left;
            s.margin_right = scaled.margin_right;
            s.margin_top = scaled.margin_top;
            s.margin_bottom = scaled.margin_bottom;
            s.volume_height = scaled.volume_height;
            s.panel_gap = scaled.panel_gap;
            s.marker_size = scaled.marker_size;
            s.marker_inset = scaled.marker_inset;
          },
          [=](const RunConfig& c) { return std::to_string(is_width ? c.style.width : c.style.height); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number<std::uint64_t>("run", "seed", [](RunConfig& c) -> auto& { return c.seed; }),

      text("data", "symbol", [](RunConfig& c) -> auto& { return c.data.symbol; }),
      text("data", "interval", [](RunConfig& c) -> auto& { return c.data.interval; }),
      text("data", "train_start", [](RunConfig& c) -> auto& { return c.data.train_start; }),
      text("data", "train_end", [](RunConfig& c) -> auto& { return c.data.train_end; }),
      text("data", "eval_start", [](RunConfig& c) -> auto& { return c.data.eval_start; }),
      text("data", "eval_end", [](RunConfig& c) -> auto& { return c.data.eval_end; }),
      text("data", "mode", [](RunConfig& c) -> auto& { return c.data.mode; }),
      text("data", "market", [](RunConfig& c) -> auto& { return c.data.market; }),
      text("data", "fixture_dir", [](RunConfig& c) -> auto& { return c.data.fixture_dir; }),
      text("data", "api_base", [](RunConfig& c) -> auto& { return c.data.api_base; }),

      canvas("width", true),
      canvas("height", false),
      number<int>("style", "margin_left", [](RunConfig& c) -> auto& { return c.style.margin_left; }),
      number<int>("style", "margin_right", [](RunConfig& c) -> auto& { return c.style.margin_right; }),
      number<int>("style", "margin_top", [](RunConfig& c) -> auto& { return c.style.margin_top; }),
      number<int>("style", "margin_bottom", [](RunConfig& c) -> auto& { return c.style.margin_bottom; }),
      number<int>("style", "volume_height", [](RunConfig& c) -> auto& { return c.style.volume_height; }),
      number<int>("style", "panel_gap", [](RunConfig& c) -> auto& { return c.style.panel_gap; }),
      number<int>("style", "marker_size", [](RunConfig& c) -> auto& { return c.style.marker_size; }),
      number<int>("style", "marker_inset", [](RunConfig& c) -> auto& { return c.style.marker_inset; }),
      color("style", "background", [](RunConfig& c) -> auto& { return c.style.background; }),
      color("style", "up_candle", [](RunConfig& c) -> auto& { return c.style.up_candle; }),
      color("style", "down_candle", [](RunConfig& c) -> auto& { return c.style.down_candle; }),
      color("style", "sma5_line", [](RunConfig& c) -> auto& { return c.style.sma5_line; }),
      color("style", "sma90_line", [](RunConfig& c) -> auto& { return c.style.sma90_line; }),
      color("style", "volume_bar", [](RunConfig& c) -> auto& { return c.style.volume_bar; }),
      color("style", "marker_red", [](RunConfig& c) -> auto& { return c.style.palette.red; }),
      color("style", "marker_blue", [](RunConfig& c) -> auto& { return c.style.palette.blue; }),
      color("style", "marker_black", [](RunConfig& c) -> auto& { return c.style.palette.black; }),

      number<std::size_t>("dataset", "window_len", [](RunConfig& c) -> auto& { return c.dataset.window_len; }),
      number<std::size_t>("dataset", "lookahead", [](RunConfig& c) -> auto& { return c.dataset.lookahead; }),
      number<double>("dataset", "threshold", [](RunConfig& c) -> auto& { return c.dataset.threshold; }),
      text("dataset", "train_warmup", [](RunConfig& c) -> auto& { return c.dataset.train_warmup; }),
      text("dataset", "eval_warmup", [](RunConfig& c) -> auto& { return c.dataset.eval_warmup; }),
      flag("dataset", "bridge_gaps", [](RunConfig& c) -> auto& { return c.dataset.bridge_gaps; }),

      number<int>("model", "base_channels", [](RunConfig& c) -> auto& { return c.model.unet.base_channels; }),
      number<int>("model", "levels", [](RunConfig& c) -> auto& { return c.model.unet.levels; }),
      number<int>("model", "groups", [](RunConfig& c) -> auto& { return c.model.unet.groups; }),
      number<int>("model", "time_dim", [](RunConfig& c) -> auto& { return c.model.unet.time_dim; }),
      number<int>("model", "embed_dim", [](RunConfig& c) -> auto& { return c.model.unet.embed_dim; }),
      number<int>("model", "condition_dim", [](RunConfig& c) -> auto& { return c.model.unet.condition.dim; }),
      number<double>("model", "macd_scale", [](RunConfig& c) -> auto& { return c.model.unet.condition.macd_scale; }),
      flag("model", "cross_attention", [](RunConfig& c) -> auto& { return c.model.unet.cross_attention; }),
      number<int>("model", "attention_dim", [](RunConfig& c) -> auto& { return c.model.unet.attention_dim; }),
      number<int>("model", "schedule_steps", [](RunConfig& c) -> auto& { return c.model.schedule_steps; }),
      number<double>("model", "beta_start", [](RunConfig& c) -> auto& { return c.model.beta_start; }),
      number<double>("model", "beta_end", [](RunConfig& c) -> auto& { return c.model.beta_end; }),
      number<std::uint64_t>("model", "codec_seed", [](RunConfig& c) -> auto& { return c.model.codec_seed; }),
      number<double>("model", "learning_rate", [](RunConfig& c) -> auto& { return c.model.adam.learning_rate; }),
      number<double>("model", "adam_beta1", [](RunConfig& c) -> auto& { return c.model.adam.beta1; }),
      number<double>("model", "adam_beta2", [](RunConfig& c) -> auto& { return c.model.adam.beta2; }),
      number<double>("model", "adam_epsilon", [](RunConfig& c) -> auto& { return c.model.adam.epsilon; }),
      number<double>("model", "dropout_text", [](RunConfig& c) -> auto& { return c.model.dropout.text_only; }),
      number<double>("model", "dropout_image", [](RunConfig& c) -> auto& { return c.model.dropout.image_only; }),
      number<double>("model", "dropout_both", [](RunConfig& c) -> auto& { return c.model.dropout.both; }),
      number<int>("model", "train_steps", [](RunConfig& c) -> auto& { return c.model.train_steps; }),
      number<int>("model", "batch_size", [](RunConfig& c) -> auto& { return c.model.batch_size; }),
      number<std::size_t>("model", "max_examples", [](RunConfig& c) -> auto& { return c.model.max_examples; }),

      number<int>("sampler", "steps", [](RunConfig& c) -> auto& { return c.sampler.steps; }),
      number<double>("sampler", "text_guidance", [](RunConfig& c) -> auto& { return c.sampler.text_guidance; }),
      number<double>("sampler", "image_guidance", [](RunConfig& c) -> auto& { return c.sampler.image_guidance; }),

      path("paths", "data_dir", [](RunConfig& c) -> auto& { return c.paths.data_dir; }),
      path("paths", "dataset_dir", [](RunConfig& c) -> auto& { return c.paths.dataset_dir; }),
      path("paths", "checkpoint", [](RunConfig& c) -> auto& { return c.paths.checkpoint; }),
      path("paths", "results_dir", [](RunConfig& c) -> auto& { return c.paths.results_dir; }),

      text("service", "bind", [](RunConfig& c) -> auto& { return c.service.bind; }),
      number<int>("service", "port", [](RunConfig& c) -> auto& { return c.service.port; }),
      number<int>("service", "workers", [](RunConfig& c) -> auto& { return c.service.workers; }),
      number<int>("service", "queue_capacity", [](RunConfig& c) -> auto& { return c.service.queue_capacity; }),
      path("service", "static_dir", [](RunConfig& c) -> auto& { return c.service.static_dir; }),
  };
  return table;
}

void check_warmup(const std::string& value, const char* key) {
  if (value != "in_sample" && value != "prefetched") {
    throw ConfigError(std::string("dataset.") + key + " must be in_sample or prefetched");
  }
}

WarmupMode warmup_mode(const std::string& value) {
  return value == "prefetched" ? WarmupMode::kPrefetched : WarmupMode::kInSample;
}

}  // namespace

void RunConfig::validate() const {
  const auto ts = [](const std::string& v, const char* key) {
    try {
      return parse_timestamp(v);
    } catch (const Error& e) {
      throw ConfigError(std::string("data.") + key + ": " + e.what());
    }
  };
  if (data.symbol.empty()) throw ConfigError("data.symbol must not be empty");
  try {
    parse_interval(data.interval);
  } catch (const Error& e) {
    throw ConfigError(std::string("data.interval: ") + e.what());
  }
  if (ts(data.train_start, "train_start") >= ts(data.train_end, "train_end")) {
    throw ConfigError("data.train_start must precede data.train_end");
  }
  if (ts(data.eval_start, "eval_start") >= ts(data.eval_end, "eval_end")) {
    throw ConfigError("data.eval_start must precede data.eval_end");
  }
  if (data.mode != "fixture" && data.mode != "live") throw ConfigError("data.mode must be fixture or live");
  if (data.market != "futures" && data.market != "spot") throw ConfigError("data.market must be futures or spot");

  style.validate();
  if (dataset.window_len < 1) throw ConfigError("dataset.window_len must be positive");
  if (dataset.lookahead < 1) throw ConfigError("dataset.lookahead must be positive");
  if (!(dataset.threshold >= 0.0) || dataset.threshold >= 1.0) throw ConfigError("dataset.threshold must lie in [0, 1)");
  check_warmup(dataset.train_warmup, "train_warmup");
  check_warmup(dataset.eval_warmup, "eval_warmup");

  model.unet.validate();
  const int multiple = diffusion::LatentCodec::kFactor * model.unet.spatial_multiple();
  if (style.width % multiple != 0 || style.height % multiple != 0) {
    throw ConfigError("style size must be divisible by " + std::to_string(multiple) + " for this model depth");
  }
  try {
    diffusion::make_schedule(model.schedule_steps, model.beta_start, model.beta_end);
  } catch (const Error& e) {
    throw ConfigError(std::string("model schedule: ") + e.what());
  }
  model.adam.validate();
  model.dropout.validate();
  if (model.train_steps < 0) throw ConfigError("model.train_steps must not be negative");
  if (model.batch_size < 1) throw ConfigError("model.batch_size must be positive");

  if (sampler.steps < 1 || sampler.steps > model.schedule_steps) {
    throw ConfigError("sampler.steps must lie in [1, model.schedule_steps]");
  }
  if (!std::isfinite(sampler.text_guidance) || !std::isfinite(sampler.image_guidance)) {
    throw ConfigError("sampler guidance scales must be finite");
  }
  if (service.port < 0 || service.port > 65535) throw ConfigError("service.port out of range");
  if (service.workers < 1) throw ConfigError("service.workers must be positive");
  if (service.queue_capacity < 0) throw ConfigError("service.queue_capacity must not be negative");
}

void RunConfig::resolve_paths(const std::filesystem::path& base) {
  const auto fix = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = (base / p).lexically_normal();
  };
  fix(paths.data_dir);
  fix(paths.dataset_dir);
  fix(paths.checkpoint);
  fix(paths.results_dir);
  fix(service.static_dir);
  if (!data.fixture_dir.empty()) {
    std::filesystem::path f = data.fixture_dir;
    fix(f);
    data.fixture_dir = f.string();
  }
}

DataSourceConfig RunConfig::data_source(bool offline) const {
  DataSourceConfig base;
  base.mode = data.mode == "live" ? DataMode::kLive : DataMode::kFixture;
  base.market = data.market == "spot" ? MarketKind::kSpot : MarketKind::kFutures;
  base.fixture_dir = data.fixture_dir;
  base.api_base = data.api_base;
  DataSourceConfig out = DataSourceConfig::from_env(base);
  if (offline) out.mode = DataMode::kFixture;
  return out;
}

EnumerationOptions RunConfig::enumeration(bool eval) const {
  EnumerationOptions o;
  o.window_len = dataset.window_len;
  o.lookahead = dataset.lookahead;
  o.threshold = dataset.threshold;
  o.bridge_gaps = dataset.bridge_gaps;
  o.warmup = warmup_mode(eval ? dataset.eval_warmup : dataset.train_warmup);
  return o;
}

diffusion::NoiseSchedule RunConfig::schedule() const {
  return diffusion::make_schedule(model.schedule_steps, model.beta_start, model.beta_end);
}

diffusion::SamplerConfig RunConfig::sampler_config(std::uint64_t sample_seed) const {
  return {sampler.steps, sampler.text_guidance, sampler.image_guidance, sample_seed};
}

std::int64_t RunConfig::interval_ms() const { return parse_interval(data.interval); }

RunConfig parse_run_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }

  std::set<std::string> known;
  for (const Field& f : fields()) known.insert(where(f));
  std::set<std::string> sections;
  for (const Field& f : fields()) sections.insert(f.section);
  for (const auto& [section, body] : tree) {
    if (!sections.contains(section)) throw ConfigError("unknown config section [" + section + "]");
    if (body.empty() && !body.data().empty()) throw ConfigError("key '" + section + "' must be inside a section");
    for (const auto& [key, value] : body) {
      if (!known.contains(section + "." + key)) throw ConfigError("unknown config key " + section + "." + key);
    }
  }

  RunConfig config;
  for (const Field& f : fields()) {
    const auto section = tree.get_child_optional(f.section);
    if (!section) continue;
    const auto value = section->get_child_optional(pt::ptree::path_type(f.key, '\0'));
    if (value) f.set(config, value->data());
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config = parse_run_config(ss.str());
  config.resolve_paths(path.parent_path().empty() ? std::filesystem::current_path() : path.parent_path());
  return config;
}

std::string serialize_run_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace candleforge
