#include "candleforge/diffusion/training.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "candleforge/error.hpp"

namespace candleforge::diffusion {

void GuidanceDropout::validate() const {
  for (double p : {text_only, image_only, both}) {
    if (!(p >= 0.0) || p > 1.0) throw ConfigError("guidance dropout probabilities must lie in [0, 1]");
  }
  if (text_only + image_only + both > 1.0) throw ConfigError("guidance dropout probabilities sum past 1");
}

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

template <typename T>
std::vector<SampleDraw<T>> draw_samples(std::size_t count, int channels, int height, int width,
                                        const NoiseSchedule& schedule, const GuidanceDropout& dropout, Rng& rng) {
  std::vector<SampleDraw<T>> draws(count);
  for (auto& d : draws) {
    d.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
    d.eps = Tensor<T>(channels, height, width);
    for (auto& v : d.eps.data) v = static_cast<T>(rng.normal());
    const double u = rng.uniform();
    if (u < dropout.text_only) {
      d.drop_text = true;
    } else if (u < dropout.text_only + dropout.image_only) {
      d.drop_image = true;
    } else if (u < dropout.text_only + dropout.image_only + dropout.both) {
      d.drop_text = true;
      d.drop_image = true;
    }
  }
  return draws;
}

template <typename T>
Tensor<T> concat_latents(const Tensor<T>& noisy, const Tensor<T>& input) {
  if (noisy.height != input.height || noisy.width != input.width) {
    throw ArgumentError("latent spatial shapes differ: " + noisy.shape_string() + " vs " + input.shape_string());
  }
  Tensor<T> x(noisy.channels + input.channels, noisy.height, noisy.width);
  std::copy(noisy.data.begin(), noisy.data.end(), x.data.begin());
  std::copy(input.data.begin(), input.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(noisy.size()));
  return x;
}

template <typename T>
double training_loss(const Denoiser<T>& model, const std::vector<const TrainingExample*>& batch,
                     const std::vector<SampleDraw<T>>& draws, const NoiseSchedule& schedule, std::vector<T>* grad) {
  if (batch.empty()) throw ArgumentError("training batch is empty");
  if (draws.size() != batch.size()) throw ArgumentError("one draw per batch element is required");
  if (grad) grad->assign(model.parameter_count(), T(0));

  const std::size_t elements = batch.front()->edited.size();
  const double denom = static_cast<double>(batch.size()) * static_cast<double>(elements);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TrainingExample& ex = *batch[b];
    const SampleDraw<T>& d = draws[b];
    if (ex.edited.size() != elements) throw ArgumentError("batch latents differ in size");
    const Tensor<T> x0 = ex.edited.template cast<T>();
    const Tensor<T> xt = add_noise(x0, d.t, d.eps, schedule);
    const Tensor<T> x = concat_latents(xt, ex.input.template cast<T>());
    Conditioning cond{ex.features, d.drop_text, d.drop_image};
    ForwardCache<T> cache;
    const Tensor<T> eps_hat = model.forward(x, static_cast<double>(d.t), cond, cache);
    Tensor<T> dout(eps_hat.channels, eps_hat.height, eps_hat.width);
    for (std::size_t i = 0; i < eps_hat.size(); ++i) {
      const double diff = static_cast<double>(eps_hat.data[i]) - static_cast<double>(d.eps.data[i]);
      total += diff * diff;
      dout.data[i] = static_cast<T>(2.0 * diff / denom);
    }
    if (grad) model.backward(cache, dout, *grad);
  }
  return total / denom;
}

template <typename T>
double training_loss(const Denoiser<T>& model, const std::vector<const TrainingExample*>& batch,
                     const NoiseSchedule& schedule, const GuidanceDropout& dropout, Rng& rng) {
  if (batch.empty()) throw ArgumentError("training batch is empty");
  const Latent& shape = batch.front()->edited;
  const auto draws = draw_samples<T>(batch.size(), shape.channels, shape.height, shape.width, schedule, dropout, rng);
  return training_loss<T>(model, batch, draws, schedule, static_cast<std::vector<T>*>(nullptr));
}

template <typename T>
Adam<T>::Adam(std::size_t size, AdamConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {
  config_.validate();
}

template <typename T>
void Adam<T>::step(std::vector<T>& params, const std::vector<T>& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ArgumentError("adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
    const double update = config_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.epsilon);
    params[i] = static_cast<T>(static_cast<double>(params[i]) - update);
  }
}

Denoiser<float> train_denoiser(const UNetConfig& config, const TrainOptions& options,
                               const std::vector<TrainingExample>& examples, const NoiseSchedule& schedule,
                               const std::function<void(const StepRecord&)>& on_step) {
  if (examples.empty()) throw ArgumentError("no training examples");
  if (options.steps < 0 || options.batch_size < 1) throw ConfigError("training steps and batch size must be positive");
  options.dropout.validate();

  Denoiser<float> model(config);
  model.initialize(derive_seed(options.seed, "init"));
  Adam<float> adam(model.parameter_count(), options.adam);
  Rng rng(derive_seed(options.seed, "train"));

  std::vector<std::size_t> order(examples.size());
  std::size_t cursor = order.size();
  const auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  const Latent& shape = examples.front().edited;
  std::vector<float> grad;
  for (int step = 1; step <= options.steps; ++step) {
    std::vector<const TrainingExample*> batch;
    for (int b = 0; b < options.batch_size; ++b) batch.push_back(&examples[next_index()]);
    const auto draws = draw_samples<float>(batch.size(), shape.channels, shape.height, shape.width, schedule,
                                           options.dropout, rng);
    const double loss = training_loss(model, batch, draws, schedule, &grad);
    if (!std::isfinite(loss)) {
      throw ValidationError("non-finite training loss at step " + std::to_string(step));
    }
    adam.step(model.params(), grad);
    if (on_step) on_step({step, loss, options.adam.learning_rate});
  }
  return model;
}

std::vector<double> smooth_losses(const std::vector<double>& losses, std::size_t window) {
  if (window == 0) throw ArgumentError("smoothing window must be positive");
  std::vector<double> out(losses.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    sum += losses[i];
    if (i >= window) sum -= losses[i - window];
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

template std::vector<SampleDraw<float>> draw_samples(std::size_t, int, int, int, const NoiseSchedule&,
                                                     const GuidanceDropout&, Rng&);
template std::vector<SampleDraw<double>> draw_samples(std::size_t, int, int, int, const NoiseSchedule&,
                                                      const GuidanceDropout&, Rng&);
template Tensor<float> concat_latents(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_latents(const Tensor<double>&, const Tensor<double>&);
template double training_loss(const Denoiser<float>&, const std::vector<const TrainingExample*>&,
                              const std::vector<SampleDraw<float>>&, const NoiseSchedule&, std::vector<float>*);
template double training_loss(const Denoiser<double>&, const std::vector<const TrainingExample*>&,
                              const std::vector<SampleDraw<double>>&, const NoiseSchedule&, std::vector<double>*);
template double training_loss(const Denoiser<float>&, const std::vector<const TrainingExample*>&,
                              const NoiseSchedule&, const GuidanceDropout&, Rng&);
template double training_loss(const Denoiser<double>&, const std::vector<const TrainingExample*>&,
                              const NoiseSchedule&, const GuidanceDropout&, Rng&);
template class Adam<float>;
template class Adam<double>;

}  // namespace candleforge::diffusion
