#include "candleforge/decimal.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "candleforge/error.hpp"

namespace candleforge {

bool Decimal::is_valid(std::string_view text) noexcept {
  if (text.empty()) return false;
  std::size_t i = 0;
  std::size_t int_digits = 0;
  while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
    ++i;
    ++int_digits;
  }
  if (int_digits == 0) return false;
  if (i == text.size()) return true;
  if (text[i] != '.') return false;
  ++i;
  const std::size_t frac_start = i;
  while (i < text.size() && text[i] >= '0' && text[i] <= '9') ++i;
  return i == text.size() && i > frac_start;
}

Decimal::Decimal(std::string_view text) : text_(text), value_(0.0) {
  if (!is_valid(text)) throw ArgumentError("not a non-negative decimal: '" + std::string(text) + "'");
  const auto [ptr, ec] = std::from_chars(text_.data(), text_.data() + text_.size(), value_);
  if (ec != std::errc{}) throw ArgumentError("decimal out of range: '" + text_ + "'");
}

Decimal Decimal::from_double(double value, int places) {
  if (!(value >= 0.0) || !std::isfinite(value)) {
    throw ArgumentError("Decimal::from_double requires a finite non-negative value");
  }
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*f", places, value);
  return Decimal(buffer);
}

}  // namespace candleforge
