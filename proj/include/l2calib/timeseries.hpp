#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace l2calib {

/// Calendar date with day arithmetic (proleptic Gregorian).
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  /// Days since 1970-01-01.
  long day_number() const;
  static Date from_day_number(long dn);

  /// Accepts "M/D/YY" (JHU header style) and "YYYY-MM-DD".
  static Date parse(std::string_view text);

  std::string iso() const;

  friend bool operator==(const Date& a, const Date& b) {
    return a.year == b.year && a.month == b.month && a.day == b.day;
  }
  friend bool operator<(const Date& a, const Date& b) {
    return a.day_number() < b.day_number();
  }
};

/// Per-day cumulative case totals for one country, provinces summed.
struct CumulativeSeries {
  std::string country;
  std::vector<Date> dates;        // strictly increasing, consecutive days
  std::vector<long long> cumulative;
};

/// Daily-increment counts on the normalized domain [0, 1]. day0 and
/// day_span record the affine map back to calendar days: day(x) =
/// day0 + x * day_span, so simulators can be driven in day units.
struct TimeSeries {
  std::vector<double> x;   // strictly increasing in [0, 1]
  std::vector<double> y;   // non-negative integer counts
  int n = 0;
  int clamp_count = 0;     // negative raw increments clamped to zero
  Date day0;
  double day_span = 0.0;   // days covered by x in [0, 1]
};

/// Parses the JHU global time-series layout
/// ("Province/State,Country/Region,Lat,Long,<M/D/YY>,...").
/// Multiple province rows for the country are summed elementwise.
CumulativeSeries parse_cumulative_csv(std::string_view csv, const std::string& country);

/// First differences of the cumulative series over [start, end], one
/// observation per calendar day, each relative to the previous day's
/// total. start must have a preceding date in the series so the first
/// increment is well defined. Negative revisions clamp to zero.
TimeSeries to_daily_increments(const CumulativeSeries& s, const Date& start, const Date& end);

nlohmann::json timeseries_to_json(const TimeSeries& ts, const std::string& country,
                                  const Date& start, const Date& end);
TimeSeries timeseries_from_json(const nlohmann::json& j);

}  // namespace l2calib
