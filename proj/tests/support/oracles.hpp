#pragma once

// Independent reference implementations. Nothing here calls into the code under test except
// for plain data types.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "candleforge/chart_renderer.hpp"
#include "candleforge/dataset.hpp"
#include "candleforge/diffusion/sampler.hpp"
#include "candleforge/evaluation.hpp"

namespace cftest {

using Series = std::vector<std::optional<double>>;

// Definitional indicators evaluated in 50-digit decimal arithmetic.
Series oracle_sma(std::span<const double> closes, int period);
Series oracle_ema(std::span<const double> closes, int period);
Series oracle_rsi(std::span<const double> closes, int period);
struct OracleMacd {
  Series line, signal, histogram;
};
OracleMacd oracle_macd(std::span<const double> closes, int fast, int slow, int signal);

// Largest |a - b| over indices where both are defined. Returns +inf when definedness differs.
double max_abs_diff(const Series& a, const Series& b);

// Counts valid end indices n by checking each condition on a gapless series of length T directly.
std::size_t brute_force_pair_count(std::size_t T, const candleforge::EnumerationOptions& options);

// Nearest palette color by explicit squared distances, ties black > red > blue.
candleforge::TrendLabel oracle_classify(double r, double g, double b, const candleforge::MarkerPalette& palette);

// Exact optimal epsilon for a data distribution concentrated on `target`: recovers the
// unscaled sample from the model input and returns (x - target) / sigma.
candleforge::diffusion::EpsilonFn point_mass_epsilon(const candleforge::diffusion::Latent& target,
                                                     const candleforge::diffusion::NoiseSchedule& schedule);

}  // namespace cftest
