#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace candleforge {

// Non-negative decimal carried as its exact source text (e.g. "42283.58000000").
// Storage and round trips use the text; arithmetic converts to double on demand.
class Decimal {
 public:
  Decimal() : text_("0"), value_(0.0) {}

  // Throws ArgumentError unless `text` matches `[0-9]+(\.[0-9]+)?`.
  explicit Decimal(std::string_view text);

  // Shortest text that round-trips `value` with `places` fractional digits.
  static Decimal from_double(double value, int places);

  const std::string& text() const noexcept { return text_; }
  double value() const noexcept { return value_; }

  static bool is_valid(std::string_view text) noexcept;

  friend bool operator==(const Decimal& a, const Decimal& b) noexcept { return a.text_ == b.text_; }

 private:
  std::string text_;
  double value_;
};

}  // namespace candleforge
