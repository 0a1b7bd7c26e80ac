#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "candleforge/diffusion/conditioning.hpp"
#include "candleforge/diffusion/schedule.hpp"
#include "candleforge/diffusion/unet.hpp"
#include "candleforge/rng.hpp"

namespace candleforge::diffusion {

struct TrainingExample {
  Latent input;
  Latent edited;
  std::vector<double> features;  // condition features of the prompt
};

struct GuidanceDropout {
  double text_only = 0.05;
  double image_only = 0.05;
  double both = 0.05;

  void validate() const;
};

// Random quantities of one training sample, drawn up front so the loss is a deterministic
// function of (params, batch, draws).
template <typename T>
struct SampleDraw {
  int t = 0;
  Tensor<T> eps;
  bool drop_text = false;
  bool drop_image = false;
};

template <typename T>
std::vector<SampleDraw<T>> draw_samples(std::size_t count, int channels, int height, int width,
                                        const NoiseSchedule& schedule, const GuidanceDropout& dropout, Rng& rng);

// Noisy edited latent (channels 0-3) concatenated with the clean input latent (4-7).
template <typename T>
Tensor<T> concat_latents(const Tensor<T>& noisy, const Tensor<T>& input);

// Mean of (eps - eps_hat)^2 over batch and elements. When `grad` is non-null it receives
// dL/dparams (overwritten).
template <typename T>
double training_loss(const Denoiser<T>& model, const std::vector<const TrainingExample*>& batch,
                     const std::vector<SampleDraw<T>>& draws, const NoiseSchedule& schedule,
                     std::vector<T>* grad = nullptr);

// Draws its own randomness from `rng`.
template <typename T>
double training_loss(const Denoiser<T>& model, const std::vector<const TrainingExample*>& batch,
                     const NoiseSchedule& schedule, const GuidanceDropout& dropout, Rng& rng);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

template <typename T>
class Adam {
 public:
  Adam(std::size_t size, AdamConfig config);
  void step(std::vector<T>& params, const std::vector<T>& grad);
  std::int64_t steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t t_ = 0;
};

struct TrainOptions {
  int steps = 500;
  int batch_size = 8;
  AdamConfig adam;
  GuidanceDropout dropout;
  std::uint64_t seed = 1;
};

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

// Minibatches are drawn by reshuffling the example list each epoch. Throws ValidationError
// on a non-finite loss.
Denoiser<float> train_denoiser(const UNetConfig& config, const TrainOptions& options,
                               const std::vector<TrainingExample>& examples, const NoiseSchedule& schedule,
                               const std::function<void(const StepRecord&)>& on_step = {});

// Trailing moving average with window `window` (shorter at the start).
std::vector<double> smooth_losses(const std::vector<double>& losses, std::size_t window);

}  // namespace candleforge::diffusion
