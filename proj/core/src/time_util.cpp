#include "candleforge/time_util.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

#include "candleforge/error.hpp"

namespace candleforge {
namespace {

int parse_int(std::string_view text, std::string_view whole) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ParseError("invalid timestamp '" + std::string(whole) + "'", 0);
  }
  return value;
}

}  // namespace

std::int64_t parse_timestamp(std::string_view text) {
  const std::string_view whole = text;
  if (!text.empty() && text.find('-') == std::string_view::npos) {
    std::int64_t ms = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), ms);
    if (ec == std::errc{} && ptr == text.data() + text.size()) return ms;
    throw ParseError("invalid timestamp '" + std::string(whole) + "'", 0);
  }
  if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') {
    throw ParseError("invalid timestamp '" + std::string(whole) + "'", 0);
  }
  using namespace std::chrono;
  const year_month_day date{year{parse_int(text.substr(0, 4), whole)},
                            month{static_cast<unsigned>(parse_int(text.substr(5, 2), whole))},
                            day{static_cast<unsigned>(parse_int(text.substr(8, 2), whole))}};
  if (!date.ok()) throw ParseError("invalid calendar date '" + std::string(whole) + "'", 0);

  int hh = 0, mm = 0, ss = 0;
  if (text.size() > 10) {
    if (text[10] != 'T' && text[10] != ' ') throw ParseError("invalid timestamp '" + std::string(whole) + "'", 0);
    const std::string_view clock = text.substr(11);
    if (clock.size() != 5 && clock.size() != 8) {
      throw ParseError("invalid time of day in '" + std::string(whole) + "'", 0);
    }
    hh = parse_int(clock.substr(0, 2), whole);
    mm = parse_int(clock.substr(3, 2), whole);
    if (clock.size() == 8) ss = parse_int(clock.substr(6, 2), whole);
    if (hh > 23 || mm > 59 || ss > 59) throw ParseError("invalid time of day in '" + std::string(whole) + "'", 0);
  }
  const auto tp = sys_days{date} + hours{hh} + minutes{mm} + seconds{ss};
  return duration_cast<milliseconds>(tp.time_since_epoch()).count();
}

std::string format_timestamp(std::int64_t epoch_ms) {
  using namespace std::chrono;
  const sys_time<milliseconds> tp{milliseconds{epoch_ms}};
  const auto day_point = floor<days>(tp);
  const year_month_day date{day_point};
  const hh_mm_ss clock{floor<seconds>(tp - day_point)};
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()),
                static_cast<long>(clock.hours().count()), static_cast<long>(clock.minutes().count()),
                static_cast<long>(clock.seconds().count()));
  return buffer;
}

std::int64_t parse_interval(std::string_view text) {
  if (text.size() < 2) throw ParseError("invalid interval '" + std::string(text) + "'", 0);
  const char unit = text.back();
  std::int64_t count = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size() - 1, count);
  if (ec != std::errc{} || ptr != text.data() + text.size() - 1 || count <= 0) {
    throw ParseError("invalid interval '" + std::string(text) + "'", 0);
  }
  switch (unit) {
    case 'm': return count * 60'000;
    case 'h': return count * kMillisPerHour;
    case 'd': return count * 24 * kMillisPerHour;
    case 'w': return count * 7 * 24 * kMillisPerHour;
    default: throw ParseError("invalid interval unit in '" + std::string(text) + "'", 0);
  }
}

std::string format_interval(std::int64_t interval_ms) {
  constexpr std::int64_t kDay = 24 * kMillisPerHour;
  if (interval_ms % (7 * kDay) == 0) return std::to_string(interval_ms / (7 * kDay)) + "w";
  if (interval_ms % kDay == 0) return std::to_string(interval_ms / kDay) + "d";
  if (interval_ms % kMillisPerHour == 0) return std::to_string(interval_ms / kMillisPerHour) + "h";
  if (interval_ms % 60'000 == 0) return std::to_string(interval_ms / 60'000) + "m";
  throw ArgumentError("interval " + std::to_string(interval_ms) + " ms has no exchange notation");
}

}  // namespace candleforge
