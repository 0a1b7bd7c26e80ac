#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace candleforge {

// Up is drawn as a red mark, Down as blue, Flat as black.
enum class TrendLabel { kDown = 0, kUp = 1, kFlat = 2 };

// Table order used by the evaluation metrics: blue, red, black.
inline constexpr std::array<TrendLabel, 3> kLabelOrder = {TrendLabel::kDown, TrendLabel::kUp, TrendLabel::kFlat};

inline constexpr int label_index(TrendLabel label) { return static_cast<int>(label); }

inline constexpr std::string_view color_name(TrendLabel label) {
  switch (label) {
    case TrendLabel::kDown: return "blue";
    case TrendLabel::kUp: return "red";
    case TrendLabel::kFlat: return "black";
  }
  return "black";
}

inline constexpr std::string_view direction_name(TrendLabel label) {
  switch (label) {
    case TrendLabel::kDown: return "down";
    case TrendLabel::kUp: return "up";
    case TrendLabel::kFlat: return "flat";
  }
  return "flat";
}

// Accepts color names (red/blue/black) and direction names (up/down/flat).
std::optional<TrendLabel> parse_label(std::string_view text);

}  // namespace candleforge
