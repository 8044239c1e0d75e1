#pragma once

// Sales records, the region registry, CSV ingestion, population weights,
// repeat-sale pairing and the outlier filter used by the linear benchmarks.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <tuple>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "granular/date.hpp"
#include "granular/error.hpp"

namespace granular {

enum class PropType : std::uint8_t { house = 0, unit = 1 };

inline constexpr int kPropTypeCount = 2;

inline std::string_view to_string(PropType t) { return t == PropType::house ? "house" : "unit"; }

inline std::optional<PropType> parse_prop_type(std::string_view s) {
  if (s == "house") return PropType::house;
  if (s == "unit") return PropType::unit;
  return std::nullopt;
}

/// Discretized log land area in half-log-unit bands.
inline int land_band_of(double land_area) { return std::max(0, static_cast<int>(std::floor(2.0 * std::log(land_area)))); }

struct SaleRecord {
  std::string dwelling_id;
  double log_price = 0.0;
  int week = 0;
  int week_of_year = 0;
  std::string region;
  PropType prop_type = PropType::house;
  std::optional<int> bedrooms;
  std::optional<int> land_band;
  /// Continuous covariates for the hedonic benchmark: bathrooms, parking, log_land_area.
  std::map<std::string, double> extra_hedonic;
};

using Dataset = std::vector<SaleRecord>;

struct FeatureKey {
  std::string region;
  PropType prop_type = PropType::house;
  std::optional<int> bedrooms;
  std::optional<int> land_band;

  friend bool operator==(const FeatureKey&, const FeatureKey&) = default;
  friend auto operator<=>(const FeatureKey&, const FeatureKey&) = default;
};

inline std::string to_string(const FeatureKey& k) {
  std::string s = k.region + "/" + std::string(to_string(k.prop_type));
  if (k.bedrooms) s += "/bed" + std::to_string(*k.bedrooms);
  if (k.land_band) s += "/land" + std::to_string(*k.land_band);
  return s;
}

struct FeatureKeyHash {
  std::size_t operator()(const FeatureKey& k) const noexcept {
    std::size_t h = std::hash<std::string>{}(k.region);
    auto mix = [&h](std::size_t v) { h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
    mix(static_cast<std::size_t>(k.prop_type));
    mix(k.bedrooms ? static_cast<std::size_t>(*k.bedrooms) + 1 : 0);
    mix(k.land_band ? static_cast<std::size_t>(*k.land_band) + 1 : 0);
    return h;
  }
};

/// Which optional characteristics take part in the feature key.
struct KeyResolution {
  bool bedrooms = false;
  bool land_band = false;
};

inline FeatureKey key_of(const SaleRecord& r, KeyResolution res = {}) {
  FeatureKey k{r.region, r.prop_type, std::nullopt, std::nullopt};
  if (res.bedrooms) k.bedrooms = r.bedrooms;
  if (res.land_band) k.land_band = r.land_band;
  return k;
}

/// Regions with their metro membership and symmetric adjacency.
class RegionRegistry {
 public:
  struct Region {
    std::string id;
    std::string metro;
    std::vector<std::string> neighbors;
  };

  RegionRegistry() = default;
  explicit RegionRegistry(std::vector<Region> regions, std::vector<std::string> metros = {})
      : regions_(std::move(regions)), metros_(std::move(metros)) {
    if (metros_.empty()) {
      std::set<std::string> seen;
      for (const auto& r : regions_)
        if (!r.metro.empty() && seen.insert(r.metro).second) metros_.push_back(r.metro);
    }
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      if (!index_.emplace(regions_[i].id, static_cast<int>(i)).second)
        throw DataError("duplicate region id '" + regions_[i].id + "'");
    }
    validate();
  }

  std::span<const Region> regions() const { return regions_; }
  std::span<const std::string> metros() const { return metros_; }
  std::size_t size() const { return regions_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  int index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("unknown region '" + id + "'");
    return it->second;
  }
  const Region& region(const std::string& id) const { return regions_[static_cast<std::size_t>(index_of(id))]; }
  const std::string& metro_of(const std::string& id) const { return region(id).metro; }

  std::vector<std::string> regions_in_metro(const std::string& metro) const {
    std::vector<std::string> out;
    for (const auto& r : regions_)
      if (r.metro == metro) out.push_back(r.id);
    return out;
  }

  /// Copy with every adjacency list emptied.
  RegionRegistry without_adjacency() const {
    auto copy = regions_;
    for (auto& r : copy) r.neighbors.clear();
    return RegionRegistry(std::move(copy), metros_);
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : regions_) arr.push_back({{"id", r.id}, {"metro", r.metro}, {"neighbors", r.neighbors}});
    return {{"regions", arr}, {"metros", metros_}};
  }

  static RegionRegistry from_json(const nlohmann::json& j) {
    std::vector<Region> regions;
    try {
      for (const auto& r : j.at("regions")) {
        Region reg;
        reg.id = r.at("id").get<std::string>();
        if (r.contains("metro") && !r.at("metro").is_null()) reg.metro = r.at("metro").get<std::string>();
        if (r.contains("neighbors")) reg.neighbors = r.at("neighbors").get<std::vector<std::string>>();
        regions.push_back(std::move(reg));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed region registry: ") + e.what());
    }
    std::vector<std::string> metros;
    if (j.contains("metros")) metros = j.at("metros").get<std::vector<std::string>>();
    return RegionRegistry(std::move(regions), std::move(metros));
  }

  static RegionRegistry load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open region registry '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("region registry '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
  }

 private:
  void validate() const {
    std::set<std::string> metro_set(metros_.begin(), metros_.end());
    for (const auto& r : regions_) {
      if (!r.metro.empty() && !metro_set.count(r.metro))
        throw DataError("region '" + r.id + "' names undefined metro '" + r.metro + "'");
      std::set<std::string> seen;
      for (const auto& n : r.neighbors) {
        if (n == r.id) throw DataError("region '" + r.id + "' lists itself as a neighbor");
        if (!contains(n)) throw DataError("region '" + r.id + "' has unknown neighbor '" + n + "'");
        if (!seen.insert(n).second) throw DataError("region '" + r.id + "' repeats neighbor '" + n + "'");
        const auto& back = regions_[static_cast<std::size_t>(index_.at(n))].neighbors;
        if (std::find(back.begin(), back.end(), r.id) == back.end())
          throw DataError("adjacency not symmetric between '" + r.id + "' and '" + n + "'");
      }
    }
  }

  std::vector<Region> regions_;
  std::vector<std::string> metros_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

inline constexpr std::string_view kSalesCsvHeader = "dwelling_id,price,date,region,prop_type,bedrooms,land_area,bathrooms,parking";

struct RowReject {
  std::size_t row = 0;  // 1-based data row (header excluded)
  std::string reason;
};

struct SalesLoad {
  Dataset records;
  std::vector<RowReject> rejects;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::string buf(s);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads sales rows. Rows that fail validation are collected as rejects;
/// the load only fails outright when the stream is unusable or every row is
/// rejected.
inline SalesLoad parse_sales_csv(std::istream& in, const RegionRegistry& registry) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("sales CSV is empty (missing header)");
  const auto header = detail::split_csv(line);
  const auto schema = detail::split_csv(kSalesCsvHeader);
  if (header.size() < 5 || header.size() > schema.size() || !std::equal(header.begin(), header.end(), schema.begin()))
    throw DataError("malformed sales CSV header: expected '" + std::string(kSalesCsvHeader) + "'");

  SalesLoad out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    auto reject = [&](std::string reason) { out.rejects.push_back({row, std::move(reason)}); };
    const auto f = detail::split_csv(line);
    if (f.size() < 5 || f.size() > schema.size()) {
      reject("expected 5 to 9 fields, got " + std::to_string(f.size()));
      continue;
    }
    auto field = [&](std::size_t i) { return i < f.size() ? f[i] : std::string_view{}; };

    SaleRecord r;
    r.dwelling_id = std::string(f[0]);
    if (r.dwelling_id.empty()) {
      reject("empty dwelling_id");
      continue;
    }
    const auto price = detail::parse_double(f[1]);
    if (!price) {
      reject("unparseable price");
      continue;
    }
    if (*price <= 0.0) {
      reject("non-positive price");
      continue;
    }
    r.log_price = std::log(*price);
    try {
      r.week = discretize_time(parse_date(f[2]));
    } catch (const std::invalid_argument& e) {
      reject(e.what());
      continue;
    }
    r.week_of_year = week_of_year(r.week);
    r.region = std::string(f[3]);
    if (!registry.contains(r.region)) {
      reject("unknown region '" + r.region + "'");
      continue;
    }
    const auto pt = parse_prop_type(f[4]);
    if (!pt) {
      reject("prop_type must be house or unit");
      continue;
    }
    r.prop_type = *pt;

    bool bad = false;
    if (auto s = field(5); !s.empty()) {
      const auto v = detail::parse_int(s);
      if (!v || *v < 0) {
        reject("bad bedrooms");
        bad = true;
      } else {
        r.bedrooms = *v;
        r.extra_hedonic["bedrooms"] = *v;
      }
    }
    if (auto s = field(6); !bad && !s.empty()) {
      const auto v = detail::parse_double(s);
      if (!v || *v <= 0.0) {
        reject("bad land_area");
        bad = true;
      } else {
        r.land_band = land_band_of(*v);
        r.extra_hedonic["log_land_area"] = std::log(*v);
      }
    }
    for (auto [idx, name] : {std::pair{7u, "bathrooms"}, std::pair{8u, "parking"}}) {
      if (bad) break;
      if (auto s = field(idx); !s.empty()) {
        const auto v = detail::parse_double(s);
        if (!v || *v < 0.0) {
          reject(std::string("bad ") + name);
          bad = true;
        } else {
          r.extra_hedonic[name] = *v;
        }
      }
    }
    if (bad) continue;
    out.records.push_back(std::move(r));
  }
  if (row > 0 && out.records.empty())
    throw DataError("all " + std::to_string(row) + " sales rows were rejected; first: " + out.rejects.front().reason);
  return out;
}

inline SalesLoad parse_sales_csv(const std::string& path, const RegionRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sales file '" + path + "'");
  return parse_sales_csv(in, registry);
}

/// Writes records in the sales CSV schema. Prices are printed with 17
/// significant digits so the log price survives a round trip.
inline void write_sales_csv(std::ostream& out, const Dataset& data) {
  out << kSalesCsvHeader << '\n';
  char buf[64];
  for (const auto& r : data) {
    std::snprintf(buf, sizeof buf, "%.17g", std::exp(r.log_price));
    out << r.dwelling_id << ',' << buf << ',' << week_date_string(r.week) << ',' << r.region << ','
        << to_string(r.prop_type) << ',';
    if (r.bedrooms) out << *r.bedrooms;
    out << ',';
    if (auto it = r.extra_hedonic.find("log_land_area"); it != r.extra_hedonic.end()) {
      std::snprintf(buf, sizeof buf, "%.17g", std::exp(it->second));
      out << buf;
    }
    for (const char* name : {"bathrooms", "parking"}) {
      out << ',';
      if (auto it = r.extra_hedonic.find(name); it != r.extra_hedonic.end()) {
        std::snprintf(buf, sizeof buf, "%.17g", it->second);
        out << buf;
      }
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Population weights

/// Fixed probabilities h(x) of observing each feature key over a period.
struct PopulationWeights {
  std::map<FeatureKey, double> weights;
  int week_start = 0;
  int week_end = 0;  // inclusive

  double at(const FeatureKey& k) const {
    auto it = weights.find(k);
    return it == weights.end() ? 0.0 : it->second;
  }

  /// Keys selected by the filter with positive weight, renormalized to sum to one.
  std::map<FeatureKey, double> restricted(const std::function<bool(const FeatureKey&)>& in_scope) const {
    std::map<FeatureKey, double> out;
    double total = 0.0;
    for (const auto& [k, w] : weights) {
      if (w > 0.0 && in_scope(k)) {
        out.emplace(k, w);
        total += w;
      }
    }
    for (auto& [k, w] : out) w /= total;
    return out;
  }
};

inline PopulationWeights compute_population_weights(const Dataset& data, int week_start, int week_end,
                                                    KeyResolution res = {}) {
  if (week_end < week_start) throw std::invalid_argument("weight period is empty");
  std::map<FeatureKey, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& r : data) {
    auto& n = counts[key_of(r, res)];
    if (r.week >= week_start && r.week <= week_end) {
      ++n;
      ++total;
    }
  }
  if (total == 0) throw DataError("no sales inside the population-weight period");
  PopulationWeights out;
  out.week_start = week_start;
  out.week_end = week_end;
  for (const auto& [k, n] : counts) out.weights.emplace(k, static_cast<double>(n) / static_cast<double>(total));
  return out;
}

// ---------------------------------------------------------------------------
// Repeat sales

struct RepeatSalePair {
  std::string dwelling_id;
  int t1 = 0;
  int t2 = 0;
  double y1 = 0.0;
  double y2 = 0.0;
  FeatureKey key;
};

/// Consecutive sale pairs per dwelling. Several sales of one dwelling in the
/// same week collapse to the last of them in input order.
inline std::vector<RepeatSalePair> pair_repeat_sales(const Dataset& data, KeyResolution res = {}) {
  std::map<std::string, std::map<int, const SaleRecord*>> by_dwelling;
  for (const auto& r : data) by_dwelling[r.dwelling_id][r.week] = &r;
  std::vector<RepeatSalePair> out;
  for (const auto& [id, sales] : by_dwelling) {
    const SaleRecord* prev = nullptr;
    for (const auto& [week, rec] : sales) {
      if (prev) out.push_back({id, prev->week, rec->week, prev->log_price, rec->log_price, key_of(*rec, res)});
      prev = rec;
    }
  }
  return out;
}

/// Stable 64-bit FNV-1a hash, used for fold assignment.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Outlier filter

inline int calendar_year_of_week(int week) { return static_cast<int>(week_start(week).year()); }

/// Linear-interpolation sample quantile of sorted values.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Removes log prices outside median +- k * IQR of their (region, prop_type,
/// calendar year) cell. Sparse cells borrow the metro-level cell; a constant
/// cell is kept whole.
struct IqrOutlierFilter {
  double k = 3.0;
  std::size_t min_cell = 20;

  Dataset operator()(const Dataset& data, const RegionRegistry& registry) const {
    if (!(k > 0.0)) throw std::invalid_argument("outlier multiplier must be positive");
    using Cell = std::tuple<std::string, PropType, int>;
    std::map<Cell, std::vector<double>> region_cells, metro_cells;
    auto region_cell = [&](const SaleRecord& r) { return Cell{r.region, r.prop_type, calendar_year_of_week(r.week)}; };
    auto metro_cell = [&](const SaleRecord& r) {
      return Cell{registry.metro_of(r.region), r.prop_type, calendar_year_of_week(r.week)};
    };
    for (const auto& r : data) {
      region_cells[region_cell(r)].push_back(r.log_price);
      metro_cells[metro_cell(r)].push_back(r.log_price);
    }
    struct Band {
      double lo, hi;
    };
    auto band_of = [&](std::vector<double>& v) {
      std::sort(v.begin(), v.end());
      const double med = sorted_quantile(v, 0.5);
      const double iqr = sorted_quantile(v, 0.75) - sorted_quantile(v, 0.25);
      if (v.front() == v.back()) return Band{-INFINITY, INFINITY};
      return Band{med - k * iqr, med + k * iqr};
    };
    std::map<Cell, Band> region_band, metro_band;
    for (auto& [c, v] : region_cells)
      if (v.size() >= min_cell) region_band.emplace(c, band_of(v));
    for (auto& [c, v] : metro_cells) metro_band.emplace(c, band_of(v));

    Dataset out;
    out.reserve(data.size());
    for (const auto& r : data) {
      auto it = region_band.find(region_cell(r));
      const Band b = it != region_band.end() ? it->second : metro_band.at(metro_cell(r));
      if (r.log_price >= b.lo && r.log_price <= b.hi) out.push_back(r);
    }
    return out;
  }
};

inline Dataset filter_outliers(const Dataset& data, const RegionRegistry& registry, double k = 3.0) {
  return IqrOutlierFilter{k}(data, registry);
}

}  // namespace granular
