#include "candleforge/diffusion/conditioning.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "candleforge/dataset.hpp"
#include "candleforge/error.hpp"

namespace candleforge::diffusion {
namespace {

// d/2 values: sin and cos at octave frequencies pi * 2^k.
void encode_scalar(double v, int width, std::vector<double>& out) {
  for (int k = 0; k < width / 2; ++k) {
    const double w = std::numbers::pi * std::ldexp(1.0, k);
    out.push_back(std::sin(w * v));
  }
  for (int k = 0; k < width / 2; ++k) {
    const double w = std::numbers::pi * std::ldexp(1.0, k);
    out.push_back(std::cos(w * v));
  }
}

}  // namespace

void ConditionConfig::validate() const {
  if (dim < 4 || dim % 4 != 0) throw ConfigError("condition dim must be a positive multiple of 4");
  if (!(macd_scale > 0.0) || !std::isfinite(macd_scale)) throw ConfigError("macd scale must be positive");
}

std::vector<double> condition_features(double rsi, double macd, const ConditionConfig& config) {
  config.validate();
  if (!std::isfinite(rsi) || !std::isfinite(macd)) throw ArgumentError("condition values must be finite");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(config.feature_size()));
  encode_scalar(rsi / 100.0, config.dim / 2, out);
  encode_scalar(std::tanh(macd / config.macd_scale), config.dim / 2, out);
  out.push_back(1.0);
  return out;
}

Conditioning embed_condition(std::string_view prompt, bool null_text, const ConditionConfig& config,
                             const std::vector<double>& null_embedding) {
  Conditioning cond;
  if (null_text) {
    if (null_embedding.size() != static_cast<std::size_t>(config.feature_size())) {
      throw ArgumentError("null embedding has " + std::to_string(null_embedding.size()) + " values, expected " +
                          std::to_string(config.feature_size()));
    }
    cond.features = null_embedding;
    cond.is_null_text = true;
    return cond;
  }
  const PromptValues values = parse_prompt(prompt);
  cond.features = condition_features(values.rsi, values.macd, config);
  return cond;
}

}  // namespace candleforge::diffusion
