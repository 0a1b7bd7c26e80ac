#include "candleforge/diffusion/codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "candleforge/error.hpp"
#include "candleforge/rng.hpp"

namespace candleforge::diffusion {
namespace {

constexpr int kF = LatentCodec::kFactor;
constexpr int kB = LatentCodec::kBlock;

// Block vector layout: channel * 16 + dy * 4 + dx.
constexpr int block_index(int c, int dy, int dx) { return c * kF * kF + dy * kF + dx; }

}  // namespace

LatentCodec::LatentCodec(int latent_channels, std::uint64_t seed) : latent_channels_(latent_channels), seed_(seed) {
  if (latent_channels < 3 || latent_channels > kB) {
    throw ArgumentError("latent channels must be in [3, 48], got " + std::to_string(latent_channels));
  }
  projection_.assign(static_cast<std::size_t>(latent_channels) * kB, 0.0);
  const double mean_weight = 1.0 / kF;  // 16 entries of 1/4 -> unit norm
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < kF * kF; ++k) projection_[static_cast<std::size_t>(c) * kB + c * kF * kF + k] = mean_weight;
  }
  Rng rng(derive_seed(seed, "latent_codec"));
  for (int r = 3; r < latent_channels; ++r) {
    double* row = projection_.data() + static_cast<std::size_t>(r) * kB;
    for (;;) {
      for (int k = 0; k < kB; ++k) row[k] = rng.normal();
      // two Gram-Schmidt passes for numerical orthogonality
      for (int pass = 0; pass < 2; ++pass) {
        for (int q = 0; q < r; ++q) {
          const double* other = projection_.data() + static_cast<std::size_t>(q) * kB;
          double dot = 0.0;
          for (int k = 0; k < kB; ++k) dot += row[k] * other[k];
          for (int k = 0; k < kB; ++k) row[k] -= dot * other[k];
        }
      }
      double norm = 0.0;
      for (int k = 0; k < kB; ++k) norm += row[k] * row[k];
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (int k = 0; k < kB; ++k) row[k] /= norm;
        break;
      }
    }
  }
}

Latent LatentCodec::encode_normalized(const Tensor<double>& pixels) const {
  if (pixels.channels != 3) throw ArgumentError("codec expects 3 color channels");
  if (pixels.width <= 0 || pixels.height <= 0 || pixels.width % kF != 0 || pixels.height % kF != 0) {
    throw ArgumentError("image dimensions " + std::to_string(pixels.width) + "x" + std::to_string(pixels.height) +
                        " are not divisible by " + std::to_string(kF));
  }
  const int lh = pixels.height / kF;
  const int lw = pixels.width / kF;
  Latent out(latent_channels_, lh, lw);
  double block[kB];
  for (int by = 0; by < lh; ++by) {
    for (int bx = 0; bx < lw; ++bx) {
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < kF; ++dy)
          for (int dx = 0; dx < kF; ++dx) block[block_index(c, dy, dx)] = pixels.at(c, by * kF + dy, bx * kF + dx);
      for (int r = 0; r < latent_channels_; ++r) {
        const double* row = projection_.data() + static_cast<std::size_t>(r) * kB;
        double acc = 0.0;
        for (int k = 0; k < kB; ++k) acc += row[k] * block[k];
        out.at(r, by, bx) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Latent LatentCodec::encode(const RgbImage& image) const {
  if (image.width() <= 0 || image.height() <= 0 || image.width() % kF != 0 || image.height() % kF != 0) {
    throw ArgumentError("image dimensions " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                        " are not divisible by " + std::to_string(kF));
  }
  Tensor<double> px(3, image.height(), image.width());
  const auto bytes = image.bytes();
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * image.width() + x) * 3;
      for (int c = 0; c < 3; ++c) px.at(c, y, x) = bytes[base + c] / 127.5 - 1.0;
    }
  }
  return encode_normalized(px);
}

Tensor<double> LatentCodec::decode_normalized(const Latent& latent) const {
  if (latent.channels != latent_channels_) {
    throw ArgumentError("latent has " + std::to_string(latent.channels) + " channels, codec expects " +
                        std::to_string(latent_channels_));
  }
  Tensor<double> px(3, latent.height * kF, latent.width * kF);
  double block[kB];
  for (int by = 0; by < latent.height; ++by) {
    for (int bx = 0; bx < latent.width; ++bx) {
      std::fill(std::begin(block), std::end(block), 0.0);
      for (int r = 0; r < latent_channels_; ++r) {
        const double v = latent.at(r, by, bx);
        const double* row = projection_.data() + static_cast<std::size_t>(r) * kB;
        for (int k = 0; k < kB; ++k) block[k] += row[k] * v;
      }
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < kF; ++dy)
          for (int dx = 0; dx < kF; ++dx) px.at(c, by * kF + dy, bx * kF + dx) = block[block_index(c, dy, dx)];
    }
  }
  return px;
}

RgbImage LatentCodec::decode(const Latent& latent) const {
  const Tensor<double> px = decode_normalized(latent);
  RgbImage image(px.width, px.height);
  auto bytes = image.bytes();
  for (int y = 0; y < px.height; ++y) {
    for (int x = 0; x < px.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * px.width + x) * 3;
      for (int c = 0; c < 3; ++c) {
        double v = (px.at(c, y, x) + 1.0) * 127.5;
        if (!std::isfinite(v)) v = 0.0;
        bytes[base + c] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
      }
    }
  }
  return image;
}

}  // namespace candleforge::diffusion
