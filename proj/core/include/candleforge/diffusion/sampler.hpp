#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "candleforge/diffusion/schedule.hpp"
#include "candleforge/diffusion/unet.hpp"

namespace candleforge::diffusion {

struct SamplerConfig {
  int steps = 20;
  double text_guidance = 2.0;   // s_T
  double image_guidance = 1.0;  // s_I
  std::uint64_t seed = 0;

  void validate() const;
};

enum class GuidanceBranch {
  kUnconditional,  // text and image dropped
  kImage,          // image only
  kFull,
};

// eps_uncond + s_I (eps_img - eps_uncond) + s_T (eps_full - eps_img), evaluated as
// (1 - s_I) eps_uncond + (s_I - s_T) eps_img + s_T eps_full with zero terms skipped so
// (1, 1) returns eps_full exactly. Empty tensors are accepted for branches whose
// coefficient is zero.
Latent guided_epsilon(const Latent& eps_uncond, const Latent& eps_img, const Latent& eps_full, double s_image,
                      double s_text);

// Which branches guided_epsilon needs for the given scales.
struct BranchMask {
  bool unconditional = false;
  bool image = false;
  bool full = false;
};
BranchMask required_branches(double s_image, double s_text);

// Denoiser call on the scaled model input x / sqrt(sigma^2 + 1) at integer step t.
using EpsilonFn = std::function<Latent(const Latent& model_input, int t, GuidanceBranch branch)>;

struct SamplerStep {
  int t = 0;
  double sigma = 0.0;
  double sigma_next = 0.0;
  double sigma_up = 0.0;
  double sigma_down = 0.0;
};

// Evenly spaced in index space, descending: round((T-1)(S-1-i)/(S-1)).
std::vector<int> sampler_timesteps(int steps, const NoiseSchedule& schedule);

// Euler-ancestral sampling in the sigma frame starting from sigma_max * noise.
Latent sample_latent(const EpsilonFn& epsilon, int channels, int height, int width, const SamplerConfig& config,
                     const NoiseSchedule& schedule, std::vector<SamplerStep>* trace = nullptr);

// Model-backed sampling: the clean input latent is concatenated at every call.
Latent sample(const Denoiser<float>& model, const Latent& input_latent, const Conditioning& cond,
              const SamplerConfig& config, const NoiseSchedule& schedule, std::vector<SamplerStep>* trace = nullptr);

}  // namespace candleforge::diffusion
