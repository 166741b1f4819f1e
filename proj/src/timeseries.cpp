#include "l2calib/timeseries.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "l2calib/errors.hpp"

namespace l2calib {

namespace {

// Howard Hinnant's days-from-civil algorithm.
long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

void civil_from_days(long z, int& y, int& m, int& d) {
  z += 719468;
  const long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long yy = static_cast<long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

int parse_int(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw FormatError("bad integer field: '" + std::string(s) + "'");
  return v;
}

// Splits one CSV line, honoring double-quoted fields (JHU quotes
// country names containing commas, e.g. "Korea, South").
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

long Date::day_number() const { return days_from_civil(year, month, day); }

Date Date::from_day_number(long dn) {
  Date d;
  civil_from_days(dn, d.year, d.month, d.day);
  return d;
}

Date Date::parse(std::string_view text) {
  Date d;
  if (text.find('-') != std::string_view::npos) {
    // YYYY-MM-DD
    auto p1 = text.find('-');
    auto p2 = text.find('-', p1 + 1);
    if (p2 == std::string_view::npos) throw FormatError("bad date: '" + std::string(text) + "'");
    d.year = parse_int(text.substr(0, p1));
    d.month = parse_int(text.substr(p1 + 1, p2 - p1 - 1));
    d.day = parse_int(text.substr(p2 + 1));
  } else {
    // M/D/YY
    auto p1 = text.find('/');
    auto p2 = text.find('/', p1 + 1);
    if (p1 == std::string_view::npos || p2 == std::string_view::npos)
      throw FormatError("bad date: '" + std::string(text) + "'");
    d.month = parse_int(text.substr(0, p1));
    d.day = parse_int(text.substr(p1 + 1, p2 - p1 - 1));
    int yy = parse_int(text.substr(p2 + 1));
    d.year = yy < 100 ? 2000 + yy : yy;
  }
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31)
    throw FormatError("bad date: '" + std::string(text) + "'");
  return d;
}

std::string Date::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

CumulativeSeries parse_cumulative_csv(std::string_view csv, const std::string& country) {
  std::vector<std::string_view> lines;
  size_t pos = 0;
  while (pos < csv.size()) {
    size_t nl = csv.find('\n', pos);
    if (nl == std::string_view::npos) nl = csv.size();
    if (nl > pos) lines.push_back(csv.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty()) throw FormatError("empty CSV");

  auto header = split_csv_line(lines[0]);
  if (header.size() < 5) throw FormatError("header has no date columns");

  CumulativeSeries out;
  out.country = country;
  const size_t ndates = header.size() - 4;
  out.dates.reserve(ndates);
  for (size_t j = 4; j < header.size(); ++j) out.dates.push_back(Date::parse(header[j]));
  for (size_t j = 1; j < out.dates.size(); ++j) {
    if (out.dates[j].day_number() != out.dates[j - 1].day_number() + 1)
      throw FormatError("date columns are not consecutive days");
  }

  out.cumulative.assign(ndates, 0);
  bool found = false;
  for (size_t li = 1; li < lines.size(); ++li) {
    auto fields = split_csv_line(lines[li]);
    if (fields.size() != header.size())
      throw FormatError("ragged row " + std::to_string(li + 1));
    if (fields[1] != country) continue;
    found = true;
    for (size_t j = 0; j < ndates; ++j) {
      const std::string& f = fields[4 + j];
      long long v = 0;
      if (!f.empty()) {
        auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc() || p != f.data() + f.size())
          throw FormatError("bad count '" + f + "' in row " + std::to_string(li + 1));
      }
      out.cumulative[j] += v;
    }
  }
  if (!found) throw NotFound("country '" + country + "' not present");
  return out;
}

TimeSeries to_daily_increments(const CumulativeSeries& s, const Date& start, const Date& end) {
  if (s.dates.empty()) throw RangeError("empty series");
  const long d0 = s.dates.front().day_number();
  const long dN = s.dates.back().day_number();
  const long a = start.day_number();
  const long b = end.day_number();
  if (a >= b) throw RangeError("start must be before end");
  if (a < d0 || b > dN) throw RangeError("window outside available dates");
  if (a == d0)
    throw RangeError("start needs a preceding date to anchor the first increment");

  const int n = static_cast<int>(b - a + 1);
  TimeSeries ts;
  ts.n = n;
  ts.x.resize(n);
  ts.y.resize(n);
  ts.clamp_count = 0;
  ts.day0 = start;
  ts.day_span = static_cast<double>(n - 1);
  for (int i = 0; i < n; ++i) {
    const long idx = a - d0 + i;
    const long long inc = s.cumulative[idx] - s.cumulative[idx - 1];
    if (inc < 0) {
      ts.y[i] = 0.0;
      ++ts.clamp_count;
    } else {
      ts.y[i] = static_cast<double>(inc);
    }
    ts.x[i] = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
  }
  return ts;
}

nlohmann::json timeseries_to_json(const TimeSeries& ts, const std::string& country,
                                  const Date& start, const Date& end) {
  return nlohmann::json{{"country", country},
                        {"start", start.iso()},
                        {"end", end.iso()},
                        {"x", ts.x},
                        {"y", ts.y},
                        {"clamp_count", ts.clamp_count},
                        {"day0", ts.day0.iso()}};
}

TimeSeries timeseries_from_json(const nlohmann::json& j) {
  TimeSeries ts;
  ts.x = j.at("x").get<std::vector<double>>();
  ts.y = j.at("y").get<std::vector<double>>();
  ts.n = static_cast<int>(ts.x.size());
  ts.clamp_count = j.value("clamp_count", 0);
  ts.day0 = Date::parse(j.at("day0").get<std::string>());
  if (j.contains("end")) {
    Date end = Date::parse(j.at("end").get<std::string>());
    ts.day_span = static_cast<double>(end.day_number() - ts.day0.day_number());
  } else {
    ts.day_span = static_cast<double>(ts.n - 1);
  }
  if (ts.x.size() != ts.y.size()) throw FormatError("x/y length mismatch");
  return ts;
}

}  // namespace l2calib
