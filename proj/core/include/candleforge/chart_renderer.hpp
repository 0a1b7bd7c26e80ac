#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "candleforge/image.hpp"
#include "candleforge/indicators.hpp"
#include "candleforge/market_data.hpp"
#include "candleforge/trend_label.hpp"

namespace candleforge {

inline constexpr int kDefaultWindowLen = 40;

// Pixel rectangle, half-open on both axes: [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  bool contains(int x, int y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool intersects(const PixelRect& o) const noexcept {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct MarkerPalette {
  Rgb red{220, 40, 40};
  Rgb blue{40, 40, 220};
  Rgb black{20, 20, 20};

  Rgb color(TrendLabel label) const noexcept;
  friend bool operator==(const MarkerPalette&, const MarkerPalette&) = default;
};

struct ChartStyle {
  int width = 256;
  int height = 256;
  int margin_left = 8;
  int margin_right = 8;
  int margin_top = 40;
  int margin_bottom = 8;
  int volume_height = 48;
  int panel_gap = 6;

  Rgb background{255, 255, 255};
  Rgb up_candle{0, 168, 107};
  Rgb down_candle{200, 0, 200};
  Rgb sma5_line{255, 170, 0};
  Rgb sma90_line{0, 160, 220};
  Rgb volume_bar{150, 150, 150};

  int marker_size = 24;
  int marker_inset = 8;
  MarkerPalette palette;

  // Default geometry scaled from the 256x256 layout.
  static ChartStyle for_size(int width, int height);

  PixelRect price_panel() const noexcept;
  PixelRect volume_panel() const noexcept;
  PixelRect marker_rect() const noexcept;

  // Throws ConfigError when the marker leaves the top margin, touches a panel, or when a chart
  // color sits within RGB distance 100 of a marker color.
  void validate() const;

  // Stable hex digest of the serialized style, recorded in dataset metadata.
  std::string hash() const;

  friend bool operator==(const ChartStyle&, const ChartStyle&) = default;
};

void to_json(nlohmann::json& j, const ChartStyle& style);
void from_json(const nlohmann::json& j, ChartStyle& style);

// `window_len` consecutive candles with their indicator values. `end_index` is the global
// series index of the last candle.
struct ChartWindow {
  std::vector<Candle> candles;
  IndicatorFrame frame;
  std::size_t end_index = 0;

  std::size_t size() const noexcept { return candles.size(); }
};

// Window of `window_len` bars ending at global index `end_index`. Throws ArgumentError if it
// does not fit in the series.
ChartWindow make_window(const CandleSeries& series, const IndicatorFrame& frame, std::size_t end_index,
                        std::size_t window_len = kDefaultWindowLen);

// Affine maps from price, bar index, and volume to pixel coordinates.
struct ChartLayout {
  PixelRect price_panel;
  PixelRect volume_panel;
  double price_min = 0.0;
  double price_max = 0.0;
  double volume_max = 0.0;
  int slot_width = 1;
  int bars = 0;

  // Row of `price`; price_max maps to the top row of the panel, price_min to the bottom row.
  int y_for_price(double price) const;
  int slot_left(int bar) const noexcept { return price_panel.x0 + bar * slot_width; }
  int x_center(int bar) const noexcept { return slot_left(bar) + (slot_width - 1) / 2; }
  // Height in pixels of the volume bar for `volume`.
  int volume_bar_height(double volume) const;
};

// The visible price range spans candle highs and lows plus both SMA overlays. A flat window
// widens the range by 0.5% each side.
ChartLayout price_to_pixel(const ChartWindow& window, const ChartStyle& style);

struct RenderedChart {
  RgbImage pixels;
  ChartStyle style;
  std::optional<TrendLabel> marker;
};

// Integer-only rasterization: volume bars, wicks, bodies, SMA90 then SMA5 polylines, and the
// marker square when `marker` is set. Byte-identical for identical inputs.
RenderedChart render_window(const ChartWindow& window, std::optional<TrendLabel> marker, const ChartStyle& style);

// Solid fill of the marker square; every other pixel is left unchanged.
RgbImage stamp_marker(RgbImage image, TrendLabel label, const ChartStyle& style);

}  // namespace candleforge
