#include "candleforge/chart_renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "candleforge/error.hpp"

namespace candleforge {
namespace {

int scaled(int value, double factor, int minimum) {
  return std::max(minimum, static_cast<int>(std::lround(value * factor)));
}

void rgb_to_json(nlohmann::json& j, const char* key, const Rgb& c) { j[key] = {c.r, c.g, c.b}; }

void rgb_from_json(const nlohmann::json& j, const char* key, Rgb& c) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(std::string("style color '") + key + "' must be [r, g, b]");
  const auto channel = [&](std::size_t i) {
    const int value = v.at(i).get<int>();
    if (value < 0 || value > 255) throw ConfigError(std::string("style color '") + key + "' out of range");
    return static_cast<std::uint8_t>(value);
  };
  c = {channel(0), channel(1), channel(2)};
}

}  // namespace

Rgb MarkerPalette::color(TrendLabel label) const noexcept {
  switch (label) {
    case TrendLabel::kUp: return red;
    case TrendLabel::kDown: return blue;
    case TrendLabel::kFlat: return black;
  }
  return black;
}

ChartStyle ChartStyle::for_size(int width, int height) {
  ChartStyle style;
  const double f = std::min(width, height) / 256.0;
  style.width = width;
  style.height = height;
  style.margin_left = scaled(8, f, 1);
  style.margin_right = scaled(8, f, 1);
  style.margin_bottom = scaled(8, f, 1);
  style.volume_height = scaled(48, f, 2);
  style.panel_gap = scaled(6, f, 1);
  style.marker_size = scaled(24, f, 2);
  style.marker_inset = scaled(8, f, 1);
  style.margin_top = std::max(scaled(40, f, 3), style.marker_inset + style.marker_size + 1);
  return style;
}

PixelRect ChartStyle::price_panel() const noexcept {
  return {margin_left, margin_top, width - margin_right, height - margin_bottom - volume_height - panel_gap};
}

PixelRect ChartStyle::volume_panel() const noexcept {
  return {margin_left, height - margin_bottom - volume_height, width - margin_right, height - margin_bottom};
}

PixelRect ChartStyle::marker_rect() const noexcept {
  return {width - marker_inset - marker_size, marker_inset, width - marker_inset, marker_inset + marker_size};
}

void ChartStyle::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("style: image size must be positive");
  const PixelRect price = price_panel();
  const PixelRect volume = volume_panel();
  if (price.width() < 1 || price.height() < 2) throw ConfigError("style: price panel is empty");
  if (volume.height() < 1) throw ConfigError("style: volume panel is empty");
  if (volume.y0 < price.y1) throw ConfigError("style: volume panel overlaps price panel");

  const PixelRect marker = marker_rect();
  if (marker_size < 1 || marker_inset < 0) throw ConfigError("style: invalid marker geometry");
  if (marker.x0 < 0 || marker.y0 < 0 || marker.x1 > width || marker.y1 > height) {
    throw ConfigError("style: marker square falls outside the image");
  }
  if (marker.y1 > margin_top) throw ConfigError("style: marker square must lie inside the top margin");
  if (marker.intersects(price) || marker.intersects(volume)) {
    throw ConfigError("style: marker square overlaps the plot area");
  }

  const Rgb elements[] = {background, up_candle, down_candle, sma5_line, sma90_line, volume_bar};
  const Rgb marks[] = {palette.red, palette.blue, palette.black};
  for (const Rgb& e : elements) {
    for (const Rgb& m : marks) {
      if (rgb_distance(e, m) < 100.0) {
        throw ConfigError("style: chart color (" + std::to_string(e.r) + "," + std::to_string(e.g) + "," +
                          std::to_string(e.b) + ") is too close to a marker color");
      }
    }
  }
}

std::string ChartStyle::hash() const {
  nlohmann::json j = *this;
  return sha256_hex(j.dump()).substr(0, 16);
}

void to_json(nlohmann::json& j, const ChartStyle& s) {
  j = nlohmann::json::object();
  j["width"] = s.width;
  j["height"] = s.height;
  j["margin_left"] = s.margin_left;
  j["margin_right"] = s.margin_right;
  j["margin_top"] = s.margin_top;
  j["margin_bottom"] = s.margin_bottom;
  j["volume_height"] = s.volume_height;
  j["panel_gap"] = s.panel_gap;
  rgb_to_json(j, "background", s.background);
  rgb_to_json(j, "up_candle", s.up_candle);
  rgb_to_json(j, "down_candle", s.down_candle);
  rgb_to_json(j, "sma5_line", s.sma5_line);
  rgb_to_json(j, "sma90_line", s.sma90_line);
  rgb_to_json(j, "volume_bar", s.volume_bar);
  j["marker_size"] = s.marker_size;
  j["marker_inset"] = s.marker_inset;
  rgb_to_json(j, "marker_red", s.palette.red);
  rgb_to_json(j, "marker_blue", s.palette.blue);
  rgb_to_json(j, "marker_black", s.palette.black);
}

void from_json(const nlohmann::json& j, ChartStyle& s) {
  const auto get_int = [&](const char* key, int& out) {
    if (j.contains(key)) out = j.at(key).get<int>();
  };
  get_int("width", s.width);
  get_int("height", s.height);
  get_int("margin_left", s.margin_left);
  get_int("margin_right", s.margin_right);
  get_int("margin_top", s.margin_top);
  get_int("margin_bottom", s.margin_bottom);
  get_int("volume_height", s.volume_height);
  get_int("panel_gap", s.panel_gap);
  rgb_from_json(j, "background", s.background);
  rgb_from_json(j, "up_candle", s.up_candle);
  rgb_from_json(j, "down_candle", s.down_candle);
  rgb_from_json(j, "sma5_line", s.sma5_line);
  rgb_from_json(j, "sma90_line", s.sma90_line);
  rgb_from_json(j, "volume_bar", s.volume_bar);
  get_int("marker_size", s.marker_size);
  get_int("marker_inset", s.marker_inset);
  rgb_from_json(j, "marker_red", s.palette.red);
  rgb_from_json(j, "marker_blue", s.palette.blue);
  rgb_from_json(j, "marker_black", s.palette.black);
}

ChartWindow make_window(const CandleSeries& series, const IndicatorFrame& frame, std::size_t end_index,
                        std::size_t window_len) {
  if (window_len == 0) throw ArgumentError("window length must be positive");
  if (frame.size() != series.size()) throw ArgumentError("indicator frame is not aligned to the series");
  if (end_index >= series.size() || end_index + 1 < window_len) {
    throw ArgumentError("window ending at " + std::to_string(end_index) + " does not fit in a series of " +
                        std::to_string(series.size()) + " candles");
  }
  const std::size_t first = end_index + 1 - window_len;
  ChartWindow window;
  window.candles.assign(series.candles().begin() + static_cast<std::ptrdiff_t>(first),
                        series.candles().begin() + static_cast<std::ptrdiff_t>(end_index + 1));
  window.frame = frame.slice(first, end_index + 1);
  window.end_index = end_index;
  return window;
}

int ChartLayout::y_for_price(double price) const {
  const int rows = price_panel.height() - 1;
  const double t = (price_max - price) / (price_max - price_min);
  const long y = price_panel.y0 + std::lround(t * rows);
  return static_cast<int>(std::clamp<long>(y, price_panel.y0, price_panel.y1 - 1));
}

int ChartLayout::volume_bar_height(double volume) const {
  if (volume_max <= 0.0) return 0;
  const long h = std::lround(volume / volume_max * volume_panel.height());
  return static_cast<int>(std::clamp<long>(h, 0, volume_panel.height()));
}

ChartLayout price_to_pixel(const ChartWindow& window, const ChartStyle& style) {
  if (window.candles.empty()) throw ArgumentError("cannot lay out an empty window");
  if (window.frame.size() != window.candles.size()) throw ArgumentError("window frame is not aligned to candles");

  ChartLayout layout;
  layout.price_panel = style.price_panel();
  layout.volume_panel = style.volume_panel();
  layout.bars = static_cast<int>(window.candles.size());
  layout.slot_width = std::max(1, layout.price_panel.width() / layout.bars);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < window.candles.size(); ++i) {
    lo = std::min(lo, window.candles[i].low.value());
    hi = std::max(hi, window.candles[i].high.value());
    for (const auto* overlay : {&window.frame.sma5, &window.frame.sma90}) {
      if (const auto& v = (*overlay)[i]) {
        lo = std::min(lo, *v);
        hi = std::max(hi, *v);
      }
    }
    layout.volume_max = std::max(layout.volume_max, window.candles[i].volume.value());
  }
  // Overlays of a constant series can sit an ulp off the candles, so "flat" is relative.
  if (!(hi - lo > 1e-9 * std::abs(hi))) {
    const double mid = lo + (hi - lo) / 2;
    const double pad = std::abs(mid) * 0.005;
    lo = mid - pad;
    hi = mid + pad;
    if (!(hi > lo)) {
      lo = mid - 0.5;
      hi = mid + 0.5;
    }
  }
  layout.price_min = lo;
  layout.price_max = hi;
  return layout;
}

RgbImage stamp_marker(RgbImage image, TrendLabel label, const ChartStyle& style) {
  const PixelRect r = style.marker_rect();
  if (r.x0 < 0 || r.y0 < 0 || r.x1 > image.width() || r.y1 > image.height() || r.width() < 1 || r.height() < 1) {
    throw ConfigError("marker square does not fit in a " + std::to_string(image.width()) + "x" +
                      std::to_string(image.height()) + " image");
  }
  image.fill_rect(r.x0, r.y0, r.x1 - 1, r.y1 - 1, style.palette.color(label));
  return image;
}

RenderedChart render_window(const ChartWindow& window, std::optional<TrendLabel> marker, const ChartStyle& style) {
  style.validate();
  const ChartLayout layout = price_to_pixel(window, style);
  RgbImage img(style.width, style.height, style.background);

  const int body_gap = layout.slot_width >= 3 ? 1 : 0;
  const PixelRect& vol = layout.volume_panel;
  for (int i = 0; i < layout.bars; ++i) {
    const Candle& c = window.candles[static_cast<std::size_t>(i)];
    const int left = layout.slot_left(i) + body_gap;
    const int right = layout.slot_left(i) + layout.slot_width - 1 - body_gap;
    const int h = layout.volume_bar_height(c.volume.value());
    if (h > 0) img.fill_rect(left, vol.y1 - h, right, vol.y1 - 1, style.volume_bar);
  }

  for (int i = 0; i < layout.bars; ++i) {
    const Candle& c = window.candles[static_cast<std::size_t>(i)];
    const Rgb color = c.close.value() >= c.open.value() ? style.up_candle : style.down_candle;
    const int x = layout.x_center(i);
    img.fill_rect(x, layout.y_for_price(c.high.value()), x, layout.y_for_price(c.low.value()), color);
    const int left = layout.slot_left(i) + body_gap;
    const int right = layout.slot_left(i) + layout.slot_width - 1 - body_gap;
    img.fill_rect(left, layout.y_for_price(c.open.value()), right, layout.y_for_price(c.close.value()), color);
  }

  const auto polyline = [&](const IndicatorSeries& values, Rgb color) {
    std::optional<std::pair<int, int>> prev;
    for (int i = 0; i < layout.bars; ++i) {
      const auto& v = values[static_cast<std::size_t>(i)];
      if (!v) {
        prev.reset();
        continue;
      }
      const std::pair<int, int> point{layout.x_center(i), layout.y_for_price(*v)};
      if (prev) {
        img.draw_line(prev->first, prev->second, point.first, point.second, color);
      } else {
        img.put(point.first, point.second, color);
      }
      prev = point;
    }
  };
  polyline(window.frame.sma90, style.sma90_line);
  polyline(window.frame.sma5, style.sma5_line);

  if (marker) img = stamp_marker(std::move(img), *marker, style);
  return {std::move(img), style, marker};
}

}  // namespace candleforge
