#pragma once

// D-indices: per-key density series, fixed-weight aggregation into larger
// areas, statistic extraction and density dumps for plotting.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "granular/data.hpp"
#include "granular/index_series.hpp"
#include "granular/mdn.hpp"
#include "granular/mixture.hpp"

namespace granular {

using KeyDensityFn = std::function<GaussianMixture(const FeatureKey&, int week)>;
using ScopeFilter = std::function<bool(const FeatureKey&)>;

/// Precomputed densities for a set of keys over a set of weeks.
class DensityTable {
 public:
  DensityTable() = default;

  static DensityTable from_ensemble(const EnsembleModel& ens, const std::vector<FeatureKey>& keys, const std::vector<int>& weeks) {
    std::vector<DensityQuery> queries;
    queries.reserve(keys.size() * weeks.size());
    for (const auto& k : keys)
      for (int w : weeks) queries.push_back({k, w});
    auto mixtures = predict_densities(ens, queries);
    DensityTable t;
    for (std::size_t i = 0; i < queries.size(); ++i) t.table_.emplace(std::pair{queries[i].key, queries[i].week}, std::move(mixtures[i]));
    return t;
  }

  static DensityTable from_function(const KeyDensityFn& fn, const std::vector<FeatureKey>& keys, const std::vector<int>& weeks) {
    DensityTable t;
    for (const auto& k : keys)
      for (int w : weeks) t.table_.emplace(std::pair{k, w}, fn(k, w));
    return t;
  }

  bool contains(const FeatureKey& k, int week) const { return table_.count({k, week}) != 0; }

  const GaussianMixture& at(const FeatureKey& k, int week) const {
    auto it = table_.find({k, week});
    if (it == table_.end()) throw std::out_of_range("no density for " + to_string(k) + " at week " + std::to_string(week));
    return it->second;
  }

 private:
  std::map<std::pair<FeatureKey, int>, GaussianMixture> table_;
};

/// Keys whose region belongs to the metro (optionally one property type).
inline ScopeFilter metro_scope(const RegionRegistry& registry, const std::string& metro,
                               std::optional<PropType> prop = std::nullopt) {
  return [&registry, metro, prop](const FeatureKey& k) {
    return registry.contains(k.region) && registry.metro_of(k.region) == metro && (!prop || k.prop_type == *prop);
  };
}

inline ScopeFilter region_scope(const std::string& region, std::optional<PropType> prop = std::nullopt) {
  return [region, prop](const FeatureKey& k) { return k.region == region && (!prop || k.prop_type == *prop); };
}

/// One mixture per week for a key or an aggregate scope.
struct DensitySeries {
  std::string scope;
  std::optional<PropType> prop_type;  // empty when property types are combined
  std::vector<int> weeks;
  std::vector<GaussianMixture> mixtures;

  std::size_t size() const { return weeks.size(); }
};

inline DensitySeries region_density_series(const EnsembleModel& ens, const FeatureKey& key, const std::vector<int>& weeks) {
  DensitySeries s;
  s.scope = key.region;
  s.prop_type = key.prop_type;
  s.weeks = weeks;
  if (weeks.empty()) {
    // Still reject unknown regions.
    (void)encode(ens.members.at(0).encoding, key, 0, 0);
    return s;
  }
  const auto table = DensityTable::from_ensemble(ens, {key}, weeks);
  for (int w : weeks) s.mixtures.push_back(table.at(key, w));
  return s;
}

/// Scope mixture at one week: the population-weighted pool of key densities.
inline GaussianMixture aggregate_density(const DensityTable& table, const std::map<FeatureKey, double>& weights, int week) {
  std::vector<GaussianMixture> parts;
  std::vector<double> w;
  parts.reserve(weights.size());
  for (const auto& [k, h] : weights) {
    parts.push_back(table.at(k, week));
    w.push_back(h);
  }
  return pool(parts, w);
}

inline DensitySeries aggregate_density_series(const DensityTable& table, const PopulationWeights& weights,
                                              const ScopeFilter& in_scope, const std::vector<int>& weeks,
                                              std::string scope_name = {}) {
  const auto restricted = weights.restricted(in_scope);
  if (restricted.empty()) throw std::invalid_argument("aggregation scope selects no key with positive weight");
  DensitySeries s;
  s.scope = std::move(scope_name);
  s.weeks = weeks;
  std::optional<PropType> common = restricted.begin()->first.prop_type;
  for (const auto& [k, h] : restricted)
    if (k.prop_type != *common) common.reset();
  s.prop_type = common;
  for (int w : weeks) s.mixtures.push_back(aggregate_density(table, restricted, w));
  return s;
}

inline DensitySeries aggregate_density_series(const EnsembleModel& ens, const PopulationWeights& weights,
                                              const ScopeFilter& in_scope, const std::vector<int>& weeks,
                                              std::string scope_name = {}) {
  const auto restricted = weights.restricted(in_scope);
  if (restricted.empty()) throw std::invalid_argument("aggregation scope selects no key with positive weight");
  std::vector<FeatureKey> keys;
  for (const auto& [k, h] : restricted) keys.push_back(k);
  const auto table = DensityTable::from_ensemble(ens, keys, weeks);
  return aggregate_density_series(table, weights, in_scope, weeks, std::move(scope_name));
}

enum class Statistic { median, gmean, mean_price, quantile };

struct StatisticSpec {
  Statistic statistic = Statistic::median;
  double p = 0.5;
};

inline double statistic_value(const GaussianMixture& m, StatisticSpec spec) {
  switch (spec.statistic) {
    case Statistic::median: return std::exp(quantile(m, 0.5));
    case Statistic::gmean: return std::exp(mean_log(m));
    case Statistic::mean_price: return moments(m).mean_price;
    case Statistic::quantile: return std::exp(quantile(m, spec.p));
  }
  return NAN;
}

/// Index series of a density statistic. The kind defaults to the
/// statistic's D-index name; pass d_subregion for key-level medians.
inline IndexSeries index_from_density(const DensitySeries& series, StatisticSpec spec,
                                      std::optional<IndexKind> kind = std::nullopt) {
  IndexSeries s;
  s.scope = series.scope;
  s.weeks = series.weeks;
  s.quantile_p = spec.p;
  switch (spec.statistic) {
    case Statistic::median: s.kind = IndexKind::d_median; break;
    case Statistic::gmean: s.kind = IndexKind::d_gmean; break;
    case Statistic::mean_price: s.kind = IndexKind::d_mean_price; break;
    case Statistic::quantile: s.kind = IndexKind::d_quantile; break;
  }
  if (kind) s.kind = *kind;
  for (const auto& m : series.mixtures) s.values.push_back(statistic_value(m, spec));
  return s;
}

/// Per-week (log price, pdf) grids over the union of +-5 sd envelopes.
inline nlohmann::json density_dump(const DensitySeries& series, int grid_points) {
  if (grid_points < 2) throw std::invalid_argument("density grid needs at least two points");
  nlohmann::json weeks = nlohmann::json::array();
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& m = series.mixtures[i];
    const double lo = m.min_mean() - 5.0 * m.max_sd();
    const double hi = m.max_mean() + 5.0 * m.max_sd();
    nlohmann::json grid = nlohmann::json::array();
    for (int g = 0; g < grid_points; ++g) {
      const double y = lo + (hi - lo) * g / (grid_points - 1);
      grid.push_back({y, pdf(m, y)});
    }
    weeks.push_back({{"week", series.weeks[i]}, {"date", week_date_string(series.weeks[i])},
                     {"median_log", quantile(m, 0.5)}, {"grid", std::move(grid)}});
  }
  return {{"scope", series.scope},
          {"prop_type", series.prop_type ? std::string(to_string(*series.prop_type)) : std::string("combined")},
          {"weeks", std::move(weeks)}};
}

}  // namespace granular
