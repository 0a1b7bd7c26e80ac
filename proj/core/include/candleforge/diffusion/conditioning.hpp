#pragma once

#include <string_view>
#include <vector>

namespace candleforge::diffusion {

struct ConditionConfig {
  int dim = 32;  // encoding width d; features carry d + 1 values (the last is the prefix flag)
  double macd_scale = 1000.0;

  int feature_size() const noexcept { return dim + 1; }
  void validate() const;

  friend bool operator==(const ConditionConfig&, const ConditionConfig&) = default;
};

// Instruction conditioning. When `is_null_text` is set the denoiser substitutes its learned null
// embedding; when `is_null_image` is set the input-latent channels are zeroed.
struct Conditioning {
  std::vector<double> features;
  bool is_null_text = false;
  bool is_null_image = false;
};

// Fixed sinusoidal encoding of (rsi / 100, tanh(macd / macd_scale)), d/2 values each, followed
// by a 1.0 prefix flag.
std::vector<double> condition_features(double rsi, double macd, const ConditionConfig& config);

// Parses the prompt (unless null_text) and encodes it. `null_embedding` supplies the features
// used for the null-text pathway.
Conditioning embed_condition(std::string_view prompt, bool null_text, const ConditionConfig& config,
                             const std::vector<double>& null_embedding);

}  // namespace candleforge::diffusion
