#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace candleforge {

inline constexpr std::int64_t kMillisPerHour = 3'600'000;

// Accepts `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM[:SS]` with optional trailing `Z`, or an integer
// count of milliseconds since the epoch. All times are UTC.
std::int64_t parse_timestamp(std::string_view text);

// `YYYY-MM-DDTHH:MM:SSZ`.
std::string format_timestamp(std::int64_t epoch_ms);

// `4h`, `15m`, `1d`, ... to milliseconds.
std::int64_t parse_interval(std::string_view text);
std::string format_interval(std::int64_t interval_ms);

}  // namespace candleforge
