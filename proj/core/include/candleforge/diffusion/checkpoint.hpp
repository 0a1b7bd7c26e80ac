#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "candleforge/diffusion/unet.hpp"

namespace candleforge::diffusion {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything besides the weights that generation needs to reproduce training conditions.
struct CheckpointMeta {
  UNetConfig unet;
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::uint64_t codec_seed = 0x5eed;
  int image_width = 256;
  int image_height = 256;
  std::uint64_t train_seed = 0;
  int train_steps = 0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

// Layout: "CFCK", u32 version, u32 json length, json meta, u32 tensor count, then per tensor
// u32 name length, name, u8 dtype (0 = f32, 1 = f64), u32 rank, u32 dims..., LE payload.
template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Denoiser<T>& model, const CheckpointMeta& meta);

template <typename T>
void save_checkpoint(const Denoiser<T>& model, const CheckpointMeta& meta, const std::filesystem::path& path);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  Denoiser<float> model;
};

// Throws ParseError on a malformed file; f64 tensors are narrowed to f32.
LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
// Keeps 64-bit tensors at full precision.
Denoiser<double> load_checkpoint_f64(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace candleforge::diffusion
