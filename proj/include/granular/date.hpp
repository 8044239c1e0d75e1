#pragma once

// Calendar <-> week-index conversion. Weeks are 7-day blocks counted from
// 1990-01-01; week-of-year is the week index modulo 52.

#include <chrono>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace granular {

inline constexpr int kWeeksPerYear = 52;

inline constexpr std::chrono::sys_days epoch_day() {
  using namespace std::chrono;
  return sys_days{year{1990} / January / 1};
}

/// Number of whole weeks elapsed since 1990-01-01.
inline int discretize_time(std::chrono::year_month_day date) {
  if (!date.ok()) throw std::invalid_argument("invalid calendar date");
  const auto days = (std::chrono::sys_days{date} - epoch_day()).count();
  if (days < 0) throw std::invalid_argument("date precedes the 1990-01-01 epoch");
  return static_cast<int>(days / 7);
}

inline int week_of_year(int week) { return ((week % kWeeksPerYear) + kWeeksPerYear) % kWeeksPerYear; }

/// First day of a week index.
inline std::chrono::year_month_day week_start(int week) {
  return std::chrono::year_month_day{epoch_day() + std::chrono::days{7LL * week}};
}

/// Parses YYYY-MM-DD. Throws std::invalid_argument on anything else.
inline std::chrono::year_month_day parse_date(std::string_view text) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string buf(text);
  if (buf.size() != 10 || std::sscanf(buf.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3)
    throw std::invalid_argument("expected ISO-8601 date YYYY-MM-DD, got '" + buf + "'");
  std::chrono::year_month_day date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw std::invalid_argument("invalid calendar date '" + buf + "'");
  return date;
}

inline std::string format_date(std::chrono::year_month_day date) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

inline std::string week_date_string(int week) { return format_date(week_start(week)); }

/// Week index containing the 15th of the given month.
inline int mid_month_week(int year, unsigned month) {
  using namespace std::chrono;
  return discretize_time(year_month_day{std::chrono::year{year}, std::chrono::month{month}, day{15}});
}

}  // namespace granular
