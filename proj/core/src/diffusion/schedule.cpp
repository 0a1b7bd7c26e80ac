#include "candleforge/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "candleforge/error.hpp"

namespace candleforge::diffusion {
namespace {

void check_step(int t, const NoiseSchedule& s) {
  if (t < 0 || t >= s.steps) {
    throw ArgumentError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.steps) + ")");
  }
}

}  // namespace

double NoiseSchedule::sigma(int t) const {
  check_step(t, *this);
  const double a = alphas_cumprod[static_cast<std::size_t>(t)];
  return std::sqrt((1.0 - a) / a);
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ArgumentError("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start < 1.0)) throw ArgumentError("beta_start must lie in (0, 1)");
  if (steps > 1 && (!(beta_end > beta_start) || !(beta_end < 1.0))) {
    throw ArgumentError("beta_end must lie in (beta_start, 1)");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.betas.resize(static_cast<std::size_t>(steps));
  s.alphas_cumprod.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double beta = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
    s.betas[static_cast<std::size_t>(i)] = beta;
    prod *= 1.0 - beta;
    s.alphas_cumprod[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

template <typename T>
Tensor<T> add_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& schedule) {
  check_step(t, schedule);
  require_same_shape(x0, eps, "add_noise");
  const double a = schedule.alphas_cumprod[static_cast<std::size_t>(t)];
  const T sa = static_cast<T>(std::sqrt(a));
  const T sb = static_cast<T>(std::sqrt(1.0 - a));
  Tensor<T> out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = sa * x0.data[i] + sb * eps.data[i];
  return out;
}

template <typename T>
Tensor<T> recover_x0(const Tensor<T>& xt, int t, const Tensor<T>& eps, const NoiseSchedule& schedule) {
  check_step(t, schedule);
  require_same_shape(xt, eps, "recover_x0");
  const double a = schedule.alphas_cumprod[static_cast<std::size_t>(t)];
  const double sa = std::sqrt(a);
  const double sb = std::sqrt(1.0 - a);
  Tensor<T> out = xt;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = static_cast<T>((static_cast<double>(xt.data[i]) - sb * static_cast<double>(eps.data[i])) / sa);
  }
  return out;
}

template Tensor<float> add_noise(const Tensor<float>&, int, const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> add_noise(const Tensor<double>&, int, const Tensor<double>&, const NoiseSchedule&);
template Tensor<float> recover_x0(const Tensor<float>&, int, const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> recover_x0(const Tensor<double>&, int, const Tensor<double>&, const NoiseSchedule&);

}  // namespace candleforge::diffusion
