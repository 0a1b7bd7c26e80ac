#include "candleforge/diffusion/sampler.hpp"

#include <cmath>
#include <string>

#include "candleforge/diffusion/training.hpp"
#include "candleforge/error.hpp"
#include "candleforge/rng.hpp"

namespace candleforge::diffusion {

void SamplerConfig::validate() const {
  if (steps < 1) throw ArgumentError("sampler steps must be at least 1");
  if (!std::isfinite(text_guidance) || !std::isfinite(image_guidance)) {
    throw ArgumentError("guidance scales must be finite");
  }
}

BranchMask required_branches(double s_image, double s_text) {
  return {1.0 - s_image != 0.0, s_image - s_text != 0.0, s_text != 0.0};
}

Latent guided_epsilon(const Latent& eps_uncond, const Latent& eps_img, const Latent& eps_full, double s_image,
                      double s_text) {
  const double coef[3] = {1.0 - s_image, s_image - s_text, s_text};
  const Latent* terms[3] = {&eps_uncond, &eps_img, &eps_full};
  const Latent* shape = nullptr;
  for (int k = 0; k < 3; ++k) {
    if (terms[k]->empty()) {
      if (coef[k] != 0.0) throw ArgumentError("guided_epsilon: a branch with nonzero weight is missing");
      continue;
    }
    if (shape && !shape->same_shape(*terms[k])) throw ArgumentError("guided_epsilon: shapes differ");
    if (!shape) shape = terms[k];
  }
  if (!shape) throw ArgumentError("guided_epsilon: no branch supplied");
  Latent out(shape->channels, shape->height, shape->width);
  bool first = true;
  for (int k = 0; k < 3; ++k) {
    if (coef[k] == 0.0) continue;
    const auto& src = terms[k]->data;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double term = coef[k] == 1.0 ? static_cast<double>(src[i]) : coef[k] * static_cast<double>(src[i]);
      out.data[i] = first ? static_cast<float>(term) : static_cast<float>(static_cast<double>(out.data[i]) + term);
    }
    first = false;
  }
  return out;
}

std::vector<int> sampler_timesteps(int steps, const NoiseSchedule& schedule) {
  if (steps < 1) throw ArgumentError("sampler steps must be at least 1");
  if (steps > schedule.steps) {
    throw ArgumentError("sampler steps " + std::to_string(steps) + " exceed schedule length " +
                        std::to_string(schedule.steps));
  }
  std::vector<int> ts(static_cast<std::size_t>(steps));
  const int last = schedule.steps - 1;
  for (int i = 0; i < steps; ++i) {
    ts[static_cast<std::size_t>(i)] =
        steps == 1 ? last : static_cast<int>(std::lround(static_cast<double>(last) * (steps - 1 - i) / (steps - 1)));
  }
  return ts;
}

Latent sample_latent(const EpsilonFn& epsilon, int channels, int height, int width, const SamplerConfig& config,
                     const NoiseSchedule& schedule, std::vector<SamplerStep>* trace) {
  config.validate();
  const std::vector<int> ts = sampler_timesteps(config.steps, schedule);
  std::vector<double> sigmas;
  for (int t : ts) sigmas.push_back(schedule.sigma(t));
  sigmas.push_back(0.0);

  Rng rng(config.seed);
  const std::size_t n = static_cast<std::size_t>(channels) * height * width;
  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal() * sigmas.front();

  const BranchMask mask = required_branches(config.image_guidance, config.text_guidance);
  if (trace) trace->clear();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double sigma = sigmas[i];
    const double sigma_next = sigmas[i + 1];
    const double scale = 1.0 / std::sqrt(sigma * sigma + 1.0);
    Latent model_in(channels, height, width);
    for (std::size_t k = 0; k < n; ++k) model_in.data[k] = static_cast<float>(x[k] * scale);

    const int t = ts[i];
    const Latent eu = mask.unconditional ? epsilon(model_in, t, GuidanceBranch::kUnconditional) : Latent{};
    const Latent ei = mask.image ? epsilon(model_in, t, GuidanceBranch::kImage) : Latent{};
    const Latent ef = mask.full ? epsilon(model_in, t, GuidanceBranch::kFull) : Latent{};
    const Latent eps = guided_epsilon(eu, ei, ef, config.image_guidance, config.text_guidance);
    if (eps.size() != n) throw ArgumentError("epsilon has the wrong shape");

    const double sigma_up = std::sqrt(sigma_next * sigma_next * (sigma * sigma - sigma_next * sigma_next) / (sigma * sigma));
    const double sigma_down = std::sqrt(sigma_next * sigma_next - sigma_up * sigma_up);
    if (trace) trace->push_back({t, sigma, sigma_next, sigma_up, sigma_down});

    // denoised = x - sigma * eps, so the Euler direction (x - denoised) / sigma is eps itself
    const double dt = sigma_down - sigma;
    for (std::size_t k = 0; k < n; ++k) x[k] += static_cast<double>(eps.data[k]) * dt;
    if (sigma_up > 0.0) {
      for (std::size_t k = 0; k < n; ++k) x[k] += rng.normal() * sigma_up;
    }
  }
  Latent out(channels, height, width);
  for (std::size_t k = 0; k < n; ++k) out.data[k] = static_cast<float>(x[k]);
  return out;
}

Latent sample(const Denoiser<float>& model, const Latent& input_latent, const Conditioning& cond,
              const SamplerConfig& config, const NoiseSchedule& schedule, std::vector<SamplerStep>* trace) {
  const int channels = model.config().out_channels;
  if (input_latent.channels + channels != model.config().in_channels) {
    throw ArgumentError("input latent has " + std::to_string(input_latent.channels) + " channels, model expects " +
                        std::to_string(model.config().in_channels - channels));
  }
  const EpsilonFn fn = [&](const Latent& model_in, int t, GuidanceBranch branch) {
    Conditioning c = cond;
    c.is_null_text = cond.is_null_text || branch != GuidanceBranch::kFull;
    c.is_null_image = cond.is_null_image || branch == GuidanceBranch::kUnconditional;
    return model.forward(concat_latents(model_in, input_latent), static_cast<double>(t), c);
  };
  return sample_latent(fn, channels, input_latent.height, input_latent.width, config, schedule, trace);
}

}  // namespace candleforge::diffusion
