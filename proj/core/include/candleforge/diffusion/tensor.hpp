#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "candleforge/error.hpp"

namespace candleforge::diffusion {

// Dense (channels, height, width) tensor, channel-major.
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  int plane() const noexcept { return height * width; }
  bool empty() const noexcept { return data.empty(); }

  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  const T& at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  T* channel(int c) { return data.data() + static_cast<std::size_t>(c) * plane(); }
  const T* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * plane(); }

  template <typename U>
  bool same_shape(const Tensor<U>& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(channels, height, width);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  std::string shape_string() const {
    return "(" + std::to_string(channels) + ", " + std::to_string(height) + ", " + std::to_string(width) + ")";
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// (4, H/4, W/4) latent image.
using Latent = Tensor<float>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) throw ArgumentError(std::string(what) + ": shape " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace candleforge::diffusion
