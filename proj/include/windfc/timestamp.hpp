#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "windfc/tensor.hpp"

namespace windfc {

/// Whole hours since 1970-01-01T00:00Z. All series live on this grid.
using HourStamp = std::int64_t;

inline HourStamp make_hour(int year, unsigned month, unsigned day, unsigned hour = 0) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok() || hour > 23) throw DataError("invalid calendar date");
  return static_cast<HourStamp>(sys_days{ymd}.time_since_epoch().count()) * 24 + hour;
}

/// Accepts `YYYY-MM-DDTHH:MM[:SS][Z]` (a space may replace the T). Minutes
/// and seconds must be zero.
inline HourStamp parse_timestamp(std::string_view s) {
  while (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.remove_suffix(1);
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, se = 0;
  char sep = 0;
  const std::string str(s);
  const int n = std::sscanf(str.c_str(), "%d-%u-%u%c%u:%u:%u", &y, &mo, &d, &sep, &h, &mi, &se);
  const bool date_only = n == 3 && str.size() == 10;
  if (!date_only && (n < 6 || (sep != 'T' && sep != ' ')))
    throw DataError("cannot parse timestamp '" + str + "'");
  if (mi != 0 || se != 0) throw DataError("timestamp '" + str + "' is not on the hourly grid");
  try {
    return make_hour(y, mo, d, h);
  } catch (const DataError&) {
    throw DataError("invalid timestamp '" + str + "'");
  }
}

struct CivilTime {
  int year;
  unsigned month, day, hour;
  unsigned day_of_year;  // 0-based
  unsigned days_in_year;
};

inline CivilTime civil(HourStamp t) {
  using namespace std::chrono;
  const auto days = static_cast<std::int64_t>(std::floor(static_cast<double>(t) / 24.0));
  const sys_days sd{std::chrono::days{days}};
  const year_month_day ymd{sd};
  const sys_days jan1{ymd.year() / January / 1};
  CivilTime c;
  c.year = static_cast<int>(ymd.year());
  c.month = static_cast<unsigned>(ymd.month());
  c.day = static_cast<unsigned>(ymd.day());
  c.hour = static_cast<unsigned>(t - days * 24);
  c.day_of_year = static_cast<unsigned>((sd - jan1).count());
  c.days_in_year = ymd.year().is_leap() ? 366u : 365u;
  return c;
}

inline std::string format_timestamp(HourStamp t) {
  const CivilTime c = civil(t);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u:00:00Z", c.year, c.month, c.day, c.hour);
  return buf;
}

}  // namespace windfc
