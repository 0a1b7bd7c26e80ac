#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace candleforge {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

double rgb_distance(const Rgb& a, const Rgb& b);

// Interleaved 8-bit RGB, row-major, no padding.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, Rgb fill = {});

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb color);
  // Silently ignores out-of-bounds coordinates.
  void put(int x, int y, Rgb color) {
    if (x >= 0 && y >= 0 && x < width_ && y < height_) set(x, y, color);
  }

  // Inclusive rectangle fill, clipped to the image.
  void fill_rect(int x0, int y0, int x1, int y1, Rgb color);
  // Bresenham line between two points, clipped to the image.
  void draw_line(int x0, int y0, int x1, int y1, Rgb color);

  std::span<const std::uint8_t> bytes() const noexcept { return pixels_; }
  std::span<std::uint8_t> bytes() noexcept { return pixels_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// 8-bit RGB PNG without alpha or timestamp chunks, so identical rasters give identical files.
std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(std::span<const std::uint8_t> data);

void write_png(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_png(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> data);

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view text);

}  // namespace candleforge
