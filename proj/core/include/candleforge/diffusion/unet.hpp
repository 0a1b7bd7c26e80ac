#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "candleforge/diffusion/conditioning.hpp"
#include "candleforge/diffusion/tensor.hpp"

namespace candleforge::diffusion {

struct UNetConfig {
  int in_channels = 8;   // noisy edited latent (0-3) + clean input latent (4-7)
  int out_channels = 4;
  int base_channels = 32;
  int levels = 2;         // level l has base_channels << l channels
  int groups = 8;         // group-norm groups; must divide base_channels
  int time_dim = 32;      // sinusoidal timestep embedding width
  int embed_dim = 64;     // width of the FiLM embedding MLP
  ConditionConfig condition;
  bool cross_attention = false;  // optional attention over the two condition tokens at the bottleneck
  int attention_dim = 16;

  void validate() const;
  // Latent height and width must be divisible by this.
  int spatial_multiple() const noexcept { return 1 << levels; }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

enum class InitMode {
  kStandard,  // fan-in scaled weights, unit norm gains, zero biases and null embedding
  kDense,     // every parameter random (gradient checks exercise all paths)
  kZero,
};

namespace detail {
struct Architecture;
}

template <typename T>
class ForwardCache {
 public:
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;

  struct State;
  std::unique_ptr<State> state;
};

// epsilon-prediction U-Net: stem conv, `levels` residual down levels with average pooling,
// a bottleneck block, mirrored up path with skip concatenation, group norm + SiLU + head conv.
// Each residual block receives a feature-wise scale and shift computed from the timestep
// embedding concatenated with the condition features.
template <typename T>
class Denoiser {
 public:
  explicit Denoiser(UNetConfig config);

  const UNetConfig& config() const noexcept { return config_; }
  const std::vector<ParamInfo>& layout() const noexcept { return layout_; }
  std::vector<T>& params() noexcept { return params_; }
  const std::vector<T>& params() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  // Throws ArgumentError for unknown names.
  const ParamInfo& info(std::string_view name) const;
  std::span<T> param(std::string_view name);
  std::span<const T> param(std::string_view name) const;

  void initialize(std::uint64_t seed, InitMode mode = InitMode::kStandard);

  // Learned features substituted for the condition when the text pathway is dropped.
  std::vector<double> null_embedding() const;

  // x: (in_channels, H, W). With cond.is_null_image the input-latent channels are zeroed;
  // with cond.is_null_text the learned null embedding replaces cond.features.
  Tensor<T> forward(const Tensor<T>& x, double t, const Conditioning& cond) const;
  Tensor<T> forward(const Tensor<T>& x, double t, const Conditioning& cond, ForwardCache<T>& cache) const;

  // Accumulates dL/dparams into `grad` (resized if empty) given dL/doutput.
  void backward(const ForwardCache<T>& cache, const Tensor<T>& grad_out, std::vector<T>& grad) const;

  template <typename U>
  Denoiser<U> cast() const {
    Denoiser<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
    return out;
  }

 private:
  UNetConfig config_;
  std::shared_ptr<const detail::Architecture> arch_;
  std::vector<ParamInfo> layout_;
  std::vector<T> params_;
};

// Convenience overload reading the condition width and null embedding from the model.
template <typename T>
Conditioning embed_condition(std::string_view prompt, bool null_text, const Denoiser<T>& model) {
  return embed_condition(prompt, null_text, model.config().condition, model.null_embedding());
}

// Sinusoidal timestep embedding of width `dim` (sin half then cos half).
std::vector<double> timestep_embedding(double t, int dim);

extern template class Denoiser<float>;
extern template class Denoiser<double>;
extern template class ForwardCache<float>;
extern template class ForwardCache<double>;

}  // namespace candleforge::diffusion
