#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace candleforge {

// Seeded generator with a platform-independent normal sampler. std::normal_distribution
// is implementation-defined, so byte-level reproducibility needs our own transform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; caches the second variate.
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a over the label bytes.
std::uint64_t hash_label(std::string_view label);

// Fans a root seed out to an independent stream per labelled consumer.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  return splitmix64(root ^ hash_label(label));
}

}  // namespace candleforge
