#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "candleforge/diffusion/tensor.hpp"
#include "candleforge/image.hpp"

namespace candleforge::diffusion {

// Frozen stand-in for a pretrained image autoencoder: pixels are scaled to [-1, 1], folded
// 4x4 space-to-depth (3 -> 48 channels), then projected by a fixed row-orthonormal
// (latent_channels x 48) matrix. The first three rows average each color channel over the
// block so flat color regions survive a round trip; the remaining rows are seeded random
// directions orthogonal to them.
class LatentCodec {
 public:
  static constexpr int kFactor = 4;
  static constexpr int kBlock = 3 * kFactor * kFactor;

  explicit LatentCodec(int latent_channels = 4, std::uint64_t seed = 0x5eed);

  int latent_channels() const noexcept { return latent_channels_; }
  std::uint64_t seed() const noexcept { return seed_; }

  // Row-major (latent_channels x 48) projection.
  const std::vector<double>& projection() const noexcept { return projection_; }

  // Throws ArgumentError unless both image dimensions are divisible by 4.
  Latent encode(const RgbImage& image) const;
  // Applies P^T, folds back to pixels, denormalizes, rounds half away from zero, clamps.
  RgbImage decode(const Latent& latent) const;
  // decode without quantization: normalized pixel values in (3, H, W).
  Tensor<double> decode_normalized(const Latent& latent) const;
  // encode from normalized (3, H, W) values.
  Latent encode_normalized(const Tensor<double>& pixels) const;

 private:
  int latent_channels_;
  std::uint64_t seed_;
  std::vector<double> projection_;
};

}  // namespace candleforge::diffusion
