#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "granular/date.hpp"

namespace granular {

enum class IndexKind { hedonic, repeat_sales, d_median, d_gmean, d_mean_price, d_subregion, d_quantile };

/// Weekly index values H(t).
struct IndexSeries {
  std::vector<int> weeks;
  std::vector<double> values;
  IndexKind kind = IndexKind::d_median;
  double quantile_p = 0.5;  // only meaningful for d_quantile
  std::string scope;

  std::size_t size() const { return weeks.size(); }
  bool empty() const { return weeks.empty(); }

  void validate() const {
    if (weeks.size() != values.size()) throw std::invalid_argument("index series: weeks and values differ in length");
    for (std::size_t i = 0; i < weeks.size(); ++i) {
      if (i > 0 && weeks[i] <= weeks[i - 1]) throw std::invalid_argument("index series: weeks must increase strictly");
      if (!(values[i] > 0.0) || !std::isfinite(values[i]))
        throw std::invalid_argument("index series: values must be positive and finite");
    }
  }

  std::optional<double> at(int week) const {
    auto it = std::lower_bound(weeks.begin(), weeks.end(), week);
    if (it == weeks.end() || *it != week) return std::nullopt;
    return values[static_cast<std::size_t>(it - weeks.begin())];
  }

  /// Value at the closest sampled week no more than max_gap weeks away.
  std::optional<double> nearest(int week, int max_gap) const {
    if (weeks.empty()) return std::nullopt;
    auto it = std::lower_bound(weeks.begin(), weeks.end(), week);
    std::optional<std::size_t> best;
    int best_gap = max_gap + 1;
    if (it != weeks.end() && *it - week < best_gap) {
      best = static_cast<std::size_t>(it - weeks.begin());
      best_gap = *it - week;
    }
    if (it != weeks.begin() && week - *(it - 1) < best_gap) best = static_cast<std::size_t>(it - weeks.begin() - 1);
    if (!best) return std::nullopt;
    return values[*best];
  }
};

inline std::string kind_name(IndexKind kind, double p = 0.5) {
  switch (kind) {
    case IndexKind::hedonic: return "hedonic";
    case IndexKind::repeat_sales: return "repeat_sales";
    case IndexKind::d_median: return "d_median";
    case IndexKind::d_gmean: return "d_gmean";
    case IndexKind::d_mean_price: return "d_mean_price";
    case IndexKind::d_subregion: return "d_subregion";
    case IndexKind::d_quantile: {
      char buf[48];
      std::snprintf(buf, sizeof buf, "d_quantile(%g)", p);
      return buf;
    }
  }
  return "unknown";
}

inline std::string kind_name(const IndexSeries& s) { return kind_name(s.kind, s.quantile_p); }

/// Divides by the value at base_week; ratios between weeks are unchanged.
inline IndexSeries normalize_index(const IndexSeries& s, int base_week) {
  const auto base = s.at(base_week);
  if (!base) throw std::invalid_argument("base week " + std::to_string(base_week) + " absent from index series");
  IndexSeries out = s;
  for (auto& v : out.values) v /= *base;
  out.values[static_cast<std::size_t>(std::lower_bound(out.weeks.begin(), out.weeks.end(), base_week) - out.weeks.begin())] = 1.0;
  return out;
}

/// Keeps only the weeks containing the 15th of each month.
inline IndexSeries monthly_sample(const IndexSeries& s) {
  IndexSeries out = s;
  out.weeks.clear();
  out.values.clear();
  if (s.empty()) return out;
  const auto first = week_start(s.weeks.front());
  const auto last = week_start(s.weeks.back());
  int y = static_cast<int>(first.year());
  unsigned m = static_cast<unsigned>(first.month());
  while (y < static_cast<int>(last.year()) || (y == static_cast<int>(last.year()) && m <= static_cast<unsigned>(last.month()))) {
    const int w = mid_month_week(y, m);
    if (auto v = s.at(w)) {
      out.weeks.push_back(w);
      out.values.push_back(*v);
    }
    if (++m > 12) {
      m = 1;
      ++y;
    }
  }
  return out;
}

inline void write_index_csv_header(std::ostream& out) { out << "week,date,value,kind,scope\n"; }

inline void write_index_csv_rows(std::ostream& out, const IndexSeries& s) {
  char buf[40];
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", s.values[i]);
    out << s.weeks[i] << ',' << week_date_string(s.weeks[i]) << ',' << buf << ',' << kind_name(s) << ',' << s.scope << '\n';
  }
}

inline void write_index_csv(std::ostream& out, const std::vector<IndexSeries>& series) {
  write_index_csv_header(out);
  for (const auto& s : series) write_index_csv_rows(out, s);
}

}  // namespace granular
