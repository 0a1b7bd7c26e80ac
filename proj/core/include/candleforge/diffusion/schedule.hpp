#pragma once

#include <vector>

#include "candleforge/diffusion/tensor.hpp"

namespace candleforge::diffusion {

struct NoiseSchedule {
  int steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas_cumprod;

  // sqrt((1 - abar_t) / abar_t): noise level of step t in the variance-exploding frame.
  double sigma(int t) const;
};

// Linear betas in [beta_start, beta_end]; requires 0 < beta_start < beta_end < 1 unless
// steps == 1, in which case the single beta is beta_start.
NoiseSchedule make_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& schedule);

// Closed-form inverse of add_noise given the noise that was used.
template <typename T>
Tensor<T> recover_x0(const Tensor<T>& xt, int t, const Tensor<T>& eps, const NoiseSchedule& schedule);

}  // namespace candleforge::diffusion
