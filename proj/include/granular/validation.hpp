#pragma once

// Evaluation protocol: out-of-sample repeat-sale projection errors, quantile
// calibration, CDF persistence across resales, Friedman / Nemenyi rank tests,
// the data-sparsity ablation and NLL generalization.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "granular/benchmarks.hpp"
#include "granular/data.hpp"
#include "granular/indices.hpp"
#include "granular/mdn.hpp"
#include "granular/parallel.hpp"

namespace granular {

// ---------------------------------------------------------------------------
// Projection

/// y1 * H(t2) / H(t1). Index values are looked up at the nearest sampled
/// week within max_gap weeks.
inline double project_price(const IndexSeries& index, double price1, int t1, int t2, int max_gap = 0) {
  const auto h1 = index.nearest(t1, max_gap);
  const auto h2 = index.nearest(t2, max_gap);
  if (!h1 || !h2) throw std::out_of_range("projection week outside the index span");
  return price1 * *h2 / *h1;
}

inline double absolute_percentage_error(double predicted, double actual) { return std::abs(predicted - actual) / actual * 100.0; }

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  return 0.5 * (upper + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

inline int fold_of(const std::string& dwelling_id, int folds) {
  return static_cast<int>(stable_hash(dwelling_id) % static_cast<std::uint64_t>(folds));
}

struct ProjectionConfig {
  int folds = 20;
  int ensemble = 8;
  TrainConfig train;
  std::vector<IndexKind> kinds{IndexKind::d_subregion, IndexKind::d_gmean, IndexKind::hedonic, IndexKind::repeat_sales};
  /// Last week of the population-weight period; defaults to the data end.
  std::optional<int> weights_cutoff;
  /// Only pairs with both legs inside [window_start, window_end] are scored.
  std::optional<int> window_start;
  std::optional<int> window_end;
  RidgeOptions ridge;
  double outlier_k = 3.0;
  /// Monthly linear indices bridge to sale weeks within this many weeks.
  int linear_max_gap = 3;
  /// Parallel fold workers; 0 means hardware concurrency.
  int threads = 0;
};

struct ProjectionErrors {
  std::string scope;
  IndexKind kind = IndexKind::d_gmean;
  double mdape = 0.0;
  double mape = 0.0;
  std::size_t n = 0;
};

/// Absolute percentage errors of every scored pair (rows) under every kind (columns).
struct ApeMatrix {
  std::vector<IndexKind> kinds;
  std::vector<std::string> dwelling_ids;
  std::vector<int> folds;
  std::vector<std::vector<double>> rows;

  std::vector<double> column(std::size_t j) const {
    std::vector<double> c;
    c.reserve(rows.size());
    for (const auto& r : rows) c.push_back(r[j]);
    return c;
  }
};

struct ProjectionErrorReport {
  std::vector<ProjectionErrors> entries;
  std::map<std::string, ApeMatrix> matrices;  // by scope
  std::vector<std::string> warnings;

  const ProjectionErrors& find(const std::string& scope, IndexKind kind) const {
    for (const auto& e : entries)
      if (e.scope == scope && e.kind == kind) return e;
    throw std::out_of_range("no projection errors for " + scope + "/" + kind_name(kind));
  }
};

namespace detail {

inline bool in_window(const RepeatSalePair& p, const ProjectionConfig& cfg) {
  return (!cfg.window_start || p.t1 >= *cfg.window_start) && (!cfg.window_end || p.t2 <= *cfg.window_end);
}

struct FoldResult {
  std::map<std::string, ApeMatrix> matrices;
  std::vector<std::string> warnings;
};

inline FoldResult run_projection_fold(const Dataset& data, const RegionRegistry& registry,
                                      const std::vector<std::string>& scopes, const ProjectionConfig& cfg, int fold,
                                      const std::vector<RepeatSalePair>& all_pairs) {
  FoldResult out;
  Dataset train_set;
  for (const auto& r : data)
    if (fold_of(r.dwelling_id, cfg.folds) != fold) train_set.push_back(r);
  std::vector<const RepeatSalePair*> held;
  for (const auto& p : all_pairs)
    if (fold_of(p.dwelling_id, cfg.folds) == fold && in_window(p, cfg)) held.push_back(&p);
  if (held.empty() || train_set.empty()) {
    out.warnings.push_back("fold " + std::to_string(fold) + " has no held-out pairs; skipped");
    return out;
  }

  const bool need_d = std::any_of(cfg.kinds.begin(), cfg.kinds.end(), [](IndexKind k) {
    return k == IndexKind::d_subregion || k == IndexKind::d_gmean || k == IndexKind::d_median;
  });
  EnsembleModel ens;
  PopulationWeights weights;
  if (need_d) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + 1000u * static_cast<std::uint64_t>(fold);
    tc.threads = 1;
    ens = train_ensemble(train_set, registry, tc, cfg.ensemble);
    int first = train_set.front().week, last = first;
    for (const auto& r : train_set) {
      first = std::min(first, r.week);
      last = std::max(last, r.week);
    }
    weights = compute_population_weights(train_set, first, cfg.weights_cutoff.value_or(last), cfg.train.resolution);
  }

  for (const auto& scope : scopes) {
    std::vector<const RepeatSalePair*> scoped;
    for (const auto* p : held)
      if (registry.contains(p->key.region) && registry.metro_of(p->key.region) == scope) scoped.push_back(p);
    if (scoped.empty()) continue;

    std::set<int> week_set;
    std::set<FeatureKey> pair_keys;
    for (const auto* p : scoped) {
      week_set.insert(p->t1);
      week_set.insert(p->t2);
      pair_keys.insert(p->key);
    }
    const std::vector<int> weeks(week_set.begin(), week_set.end());

    // Density-based indices.
    std::map<int, double> metro_gmean, metro_median;
    std::map<std::pair<FeatureKey, int>, double> key_median;
    if (need_d) {
      const auto restricted = weights.restricted(metro_scope(registry, scope));
      std::set<FeatureKey> keys(pair_keys);
      for (const auto& [k, h] : restricted) keys.insert(k);
      const auto table = DensityTable::from_ensemble(ens, std::vector<FeatureKey>(keys.begin(), keys.end()), weeks);
      for (int w : weeks) {
        if (!restricted.empty()) {
          const auto metro = aggregate_density(table, restricted, w);
          metro_gmean[w] = std::exp(mean_log(metro));
          if (std::count(cfg.kinds.begin(), cfg.kinds.end(), IndexKind::d_median)) metro_median[w] = std::exp(quantile(metro, 0.5));
        }
        for (const auto& k : pair_keys) key_median[{k, w}] = std::exp(quantile(table.at(k, w), 0.5));
      }
    }

    // Linear benchmarks on outlier-filtered training data of the scope.
    std::optional<IndexSeries> hedonic, repeat;
    Dataset scoped_train;
    for (const auto& r : train_set)
      if (registry.metro_of(r.region) == scope) scoped_train.push_back(r);
    if (std::count(cfg.kinds.begin(), cfg.kinds.end(), IndexKind::hedonic) && !scoped_train.empty()) {
      const auto cleaned = filter_outliers(scoped_train, registry, cfg.outlier_k);
      hedonic = monthly_sample(hedonic_index(fit_hedonic(cleaned, default_hedonic_covariates(), cfg.ridge, scope)));
    }
    if (std::count(cfg.kinds.begin(), cfg.kinds.end(), IndexKind::repeat_sales) && !scoped_train.empty()) {
      const auto cleaned = filter_outliers(scoped_train, registry, cfg.outlier_k);
      const auto pairs = pair_repeat_sales(cleaned);
      if (!pairs.empty()) repeat = monthly_sample(fit_repeat_sales(pairs, cfg.ridge, scope).index);
    }

    auto& mat = out.matrices[scope];
    mat.kinds = cfg.kinds;
    std::size_t dropped = 0;
    for (const auto* p : scoped) {
      const double price1 = std::exp(p->y1), price2 = std::exp(p->y2);
      std::vector<double> row;
      bool ok = true;
      for (IndexKind kind : cfg.kinds) {
        std::optional<double> ratio;
        switch (kind) {
          case IndexKind::d_subregion:
            ratio = key_median.at({p->key, p->t2}) / key_median.at({p->key, p->t1});
            break;
          case IndexKind::d_gmean:
            if (metro_gmean.count(p->t1)) ratio = metro_gmean.at(p->t2) / metro_gmean.at(p->t1);
            break;
          case IndexKind::d_median:
            if (metro_median.count(p->t1)) ratio = metro_median.at(p->t2) / metro_median.at(p->t1);
            break;
          case IndexKind::hedonic:
          case IndexKind::repeat_sales: {
            const auto& idx = kind == IndexKind::hedonic ? hedonic : repeat;
            if (idx) {
              const auto a = idx->nearest(p->t1, cfg.linear_max_gap), b = idx->nearest(p->t2, cfg.linear_max_gap);
              if (a && b) ratio = *b / *a;
            }
            break;
          }
          default: break;
        }
        if (!ratio) {
          ok = false;
          break;
        }
        row.push_back(absolute_percentage_error(price1 * *ratio, price2));
      }
      if (!ok) {
        ++dropped;
        continue;
      }
      mat.rows.push_back(std::move(row));
      mat.dwelling_ids.push_back(p->dwelling_id);
      mat.folds.push_back(fold);
    }
    if (dropped > 0)
      out.warnings.push_back("fold " + std::to_string(fold) + " scope " + scope + ": " + std::to_string(dropped) +
                             " pairs without a value under every index were not scored");
  }
  return out;
}

}  // namespace detail

/// K-fold out-of-sample projection errors. Dwellings are assigned to folds
/// by a stable hash of their id; every index is refitted on the other folds
/// and projects each held-out pair's second sale from its first.
inline ProjectionErrorReport kfold_projection_errors(const Dataset& data, const RegionRegistry& registry,
                                                     const std::vector<std::string>& scopes, const ProjectionConfig& cfg) {
  if (cfg.folds < 2) throw std::invalid_argument("k-fold validation needs at least two folds");
  if (cfg.kinds.empty()) throw std::invalid_argument("no index kinds requested");
  const auto pairs = pair_repeat_sales(data, cfg.train.resolution);
  if (pairs.empty()) throw DataError("no repeat-sale pairs to validate on");

  std::vector<detail::FoldResult> results(static_cast<std::size_t>(cfg.folds));
  parallel_for(results.size(), cfg.threads, [&](std::size_t f) {
    results[f] = detail::run_projection_fold(data, registry, scopes, cfg, static_cast<int>(f), pairs);
  });

  ProjectionErrorReport report;
  for (auto& r : results) {
    report.warnings.insert(report.warnings.end(), r.warnings.begin(), r.warnings.end());
    for (auto& [scope, m] : r.matrices) {
      auto& dst = report.matrices[scope];
      dst.kinds = m.kinds;
      dst.rows.insert(dst.rows.end(), m.rows.begin(), m.rows.end());
      dst.dwelling_ids.insert(dst.dwelling_ids.end(), m.dwelling_ids.begin(), m.dwelling_ids.end());
      dst.folds.insert(dst.folds.end(), m.folds.begin(), m.folds.end());
    }
  }
  for (const auto& scope : scopes) {
    auto it = report.matrices.find(scope);
    if (it == report.matrices.end() || it->second.rows.empty()) {
      report.warnings.push_back("scope " + scope + " has no scored pairs");
      continue;
    }
    for (std::size_t j = 0; j < cfg.kinds.size(); ++j) {
      const auto col = it->second.column(j);
      ProjectionErrors e;
      e.scope = scope;
      e.kind = cfg.kinds[j];
      e.n = col.size();
      e.mdape = median_of(col);
      e.mape = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
      report.entries.push_back(e);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationReport {
  std::vector<double> percentiles;
  std::vector<double> observed;
  double delta_median = 0.0;  // |observed(0.5) - 0.5| in percentage points
  std::size_t n = 0;
};

using RecordDensityFn = std::function<const GaussianMixture&(const SaleRecord&)>;

/// Fraction of sales below each percentile curve of the density that applies to them.
inline CalibrationReport quantile_calibration(const RecordDensityFn& density_for, std::span<const SaleRecord> sales,
                                              std::vector<double> percentiles) {
  if (sales.empty()) throw std::invalid_argument("calibration: no sales");
  std::sort(percentiles.begin(), percentiles.end());
  const bool has_median = std::binary_search(percentiles.begin(), percentiles.end(), 0.5);
  std::vector<double> grid = percentiles;
  if (!has_median) grid.insert(std::lower_bound(grid.begin(), grid.end(), 0.5), 0.5);

  std::map<const GaussianMixture*, std::vector<double>> curves;
  std::vector<std::size_t> below(grid.size(), 0);
  for (const auto& s : sales) {
    const GaussianMixture& m = density_for(s);
    auto it = curves.find(&m);
    if (it == curves.end()) {
      std::vector<double> q;
      for (double p : grid) q.push_back(quantile(m, p));
      it = curves.emplace(&m, std::move(q)).first;
    }
    for (std::size_t j = 0; j < grid.size(); ++j)
      if (s.log_price < it->second[j]) ++below[j];
  }
  CalibrationReport r;
  r.n = sales.size();
  const double n = static_cast<double>(sales.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double frac = static_cast<double>(below[j]) / n;
    if (grid[j] == 0.5) r.delta_median = std::abs(frac - 0.5) * 100.0;
    if (!has_median && grid[j] == 0.5) continue;
    r.percentiles.push_back(grid[j]);
    r.observed.push_back(frac);
  }
  return r;
}

/// Fraction of sales priced below the index curve at their week.
inline double fraction_below_index(const IndexSeries& index, std::span<const SaleRecord> sales, int max_gap = 0) {
  std::size_t below = 0, used = 0;
  for (const auto& s : sales) {
    const auto v = index.nearest(s.week, max_gap);
    if (!v) continue;
    ++used;
    if (s.log_price < std::log(*v)) ++below;
  }
  if (used == 0) throw std::invalid_argument("no sales fall inside the index span");
  return static_cast<double>(below) / static_cast<double>(used);
}

inline double delta_median_of_index(const IndexSeries& index, std::span<const SaleRecord> sales, int max_gap = 0) {
  return std::abs(fraction_below_index(index, sales, max_gap) - 0.5) * 100.0;
}

// ---------------------------------------------------------------------------
// CDF persistence

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("correlation needs two equal-length samples");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Density applying to one leg (0 = first sale, 1 = second) of a pair.
using PairDensityFn = std::function<const GaussianMixture&(const RepeatSalePair&, int leg)>;

/// Pearson correlation between each pair's CDF position at its first and second sale.
inline double cdf_persistence(const PairDensityFn& density_for, std::span<const RepeatSalePair> pairs) {
  if (pairs.size() < 3) throw std::invalid_argument("cdf persistence needs at least three pairs");
  std::vector<double> u1, u2;
  u1.reserve(pairs.size());
  u2.reserve(pairs.size());
  for (const auto& p : pairs) {
    u1.push_back(cdf(density_for(p, 0), p.y1));
    u2.push_back(cdf(density_for(p, 1), p.y2));
  }
  return pearson_correlation(u1, u2);
}

struct PersistenceRow {
  std::string scope;
  PropType prop_type = PropType::house;
  double metro = 0.0;
  double subregion = 0.0;
  std::size_t n = 0;
};

/// CDF persistence per (metro, property type) against the metro density and
/// against each pair's own key density.
inline std::vector<PersistenceRow> cdf_persistence_table(const DensityTable& table, const PopulationWeights& weights,
                                                         const RegionRegistry& registry,
                                                         std::span<const RepeatSalePair> pairs) {
  std::vector<PersistenceRow> rows;
  for (const auto& metro : registry.metros()) {
    for (PropType pt : {PropType::house, PropType::unit}) {
      std::vector<RepeatSalePair> subset;
      for (const auto& p : pairs)
        if (p.key.prop_type == pt && registry.metro_of(p.key.region) == metro) subset.push_back(p);
      if (subset.size() < 3) continue;
      const auto restricted = weights.restricted(metro_scope(registry, metro, pt));
      if (restricted.empty()) continue;
      std::map<int, GaussianMixture> metro_density;
      for (const auto& p : subset)
        for (int w : {p.t1, p.t2})
          if (!metro_density.count(w)) metro_density.emplace(w, aggregate_density(table, restricted, w));
      PersistenceRow row;
      row.scope = metro;
      row.prop_type = pt;
      row.n = subset.size();
      row.metro = cdf_persistence(
          [&](const RepeatSalePair& p, int leg) -> const GaussianMixture& { return metro_density.at(leg == 0 ? p.t1 : p.t2); },
          subset);
      row.subregion = cdf_persistence(
          [&](const RepeatSalePair& p, int leg) -> const GaussianMixture& { return table.at(p.key, leg == 0 ? p.t1 : p.t2); },
          subset);
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Rank tests

/// Studentized-range critical values q_0.05 / sqrt(2) for k = 2..10 methods
/// (infinite degrees of freedom), as tabulated for the Nemenyi test.
inline double nemenyi_q05(std::size_t k) {
  static constexpr double table[] = {1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
  if (k < 2 || k > 10) throw std::invalid_argument("Nemenyi critical values are tabulated for 2 to 10 methods");
  return table[k - 2];
}

struct RankTestReport {
  std::vector<std::string> methods;
  std::vector<double> mean_ranks;
  std::size_t n = 0;
  double statistic = 0.0;
  double p_value = 1.0;
  double alpha = 0.05;
  bool rejected = false;
  bool no_discrimination = false;
  double critical_difference = 0.0;
  std::size_t best = 0;
  /// Per method: |mean rank - best mean rank| < CD (only meaningful when rejected).
  std::vector<bool> indistinguishable_from_best;
  /// Mean rank +- CD / 2; two methods differ when their bands do not overlap.
  std::vector<std::pair<double, double>> bands;
};

/// Average ranks within each row, ties sharing the mean of their positions.
inline std::vector<double> row_ranks(std::span<const double> row) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
  std::vector<double> ranks(row.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && row[idx[j + 1]] == row[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Friedman test on per-row ranks (lower error = better rank) followed by
/// the Nemenyi critical difference when the null is rejected.
inline RankTestReport friedman_nemenyi(const std::vector<std::vector<double>>& errors, std::vector<std::string> methods,
                                       double alpha = 0.05) {
  const std::size_t k = methods.size();
  if (k < 2) throw std::invalid_argument("rank tests need at least two methods");
  if (errors.size() < 10) throw std::invalid_argument("rank tests need at least ten rows");
  if (alpha != 0.05) throw std::invalid_argument("Nemenyi critical values are tabulated for alpha = 0.05 only");
  RankTestReport r;
  r.methods = std::move(methods);
  r.n = errors.size();
  r.alpha = alpha;
  r.mean_ranks.assign(k, 0.0);
  bool all_tied = true;
  for (const auto& row : errors) {
    if (row.size() != k) throw std::invalid_argument("error matrix row has the wrong number of methods");
    const auto ranks = row_ranks(row);
    for (std::size_t j = 0; j < k; ++j) {
      r.mean_ranks[j] += ranks[j];
      if (ranks[j] != ranks[0]) all_tied = false;
    }
  }
  const double n = static_cast<double>(r.n), kd = static_cast<double>(k);
  for (auto& m : r.mean_ranks) m /= n;
  double ss = 0.0;
  for (double m : r.mean_ranks) ss += (m - (kd + 1.0) / 2.0) * (m - (kd + 1.0) / 2.0);
  r.statistic = 12.0 * n / (kd * (kd + 1.0)) * ss;
  r.no_discrimination = all_tied;
  r.p_value = all_tied ? 1.0 : boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(kd - 1.0), r.statistic));
  r.rejected = !all_tied && r.p_value < alpha;
  r.critical_difference = nemenyi_q05(k) * std::sqrt(kd * (kd + 1.0) / (6.0 * n));
  r.best = static_cast<std::size_t>(std::min_element(r.mean_ranks.begin(), r.mean_ranks.end()) - r.mean_ranks.begin());
  for (std::size_t j = 0; j < k; ++j) {
    r.indistinguishable_from_best.push_back(!r.rejected || r.mean_ranks[j] - r.mean_ranks[r.best] < r.critical_difference);
    r.bands.emplace_back(r.mean_ranks[j] - 0.5 * r.critical_difference, r.mean_ranks[j] + 0.5 * r.critical_difference);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Sparsity ablation

struct SparsityConfig {
  std::string region;
  double keep_fraction = 0.1;
  std::uint64_t seed = 1;
  int ensemble = 4;
  TrainConfig train;
};

struct SparsityResult {
  IndexSeries control;
  IndexSeries treatment;
  std::vector<double> departure;  // |treatment / control - 1| per week
  double max_departure = 0.0;
  double mean_departure = 0.0;
  /// Control and treatment log changes share a sign over every consecutive 26-week window.
  bool trend_signs_agree = true;
};

inline bool trend_signs_agree(const IndexSeries& a, const IndexSeries& b, std::size_t window = 26) {
  for (std::size_t i = 0; i + window < a.size() && i + window < b.size(); i += window) {
    const double da = std::log(a.values[i + window] / a.values[i]);
    const double db = std::log(b.values[i + window] / b.values[i]);
    if ((da > 0.0) != (db > 0.0)) return false;
  }
  return true;
}

/// Keeps each sale of `region` with probability keep_fraction; other regions untouched.
inline Dataset subsample_region(const Dataset& data, const std::string& region, double keep_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset out;
  for (const auto& r : data) {
    if (r.region == region && keep_fraction < 1.0 && !(u(rng) < keep_fraction)) continue;
    out.push_back(r);
  }
  return out;
}

/// Geometric-mean index of one region (property types combined with fixed
/// weights) from an ensemble trained on the full data (control) and on data
/// where the region keeps only a fraction of its sales (treatment).
inline SparsityResult sparsity_experiment(const Dataset& data, const RegionRegistry& registry, const SparsityConfig& cfg) {
  if (!registry.contains(cfg.region)) throw DataError("sparsity experiment: region '" + cfg.region + "' absent from registry");
  if (!(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0)) throw std::invalid_argument("keep fraction must lie in (0, 1]");
  const bool has_data = std::any_of(data.begin(), data.end(), [&](const SaleRecord& r) { return r.region == cfg.region; });
  if (!has_data) throw DataError("sparsity experiment: region '" + cfg.region + "' has no sales");
  const auto& nbrs = registry.region(cfg.region).neighbors;
  const bool nbr_data = std::any_of(data.begin(), data.end(), [&](const SaleRecord& r) {
    return std::find(nbrs.begin(), nbrs.end(), r.region) != nbrs.end();
  });
  if (!nbrs.empty() && !nbr_data) throw DataError("sparsity experiment: no neighbor of '" + cfg.region + "' has sales");

  int first = data.front().week, last = first;
  for (const auto& r : data) {
    first = std::min(first, r.week);
    last = std::max(last, r.week);
  }
  std::vector<int> weeks;
  for (int w = first; w <= last; ++w) weeks.push_back(w);
  const auto weights = compute_population_weights(data, first, last, cfg.train.resolution);
  const auto scope = region_scope(cfg.region);

  auto index_for = [&](const Dataset& d) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const auto ens = train_ensemble(d, registry, tc, cfg.ensemble);
    return index_from_density(aggregate_density_series(ens, weights, scope, weeks, cfg.region), {Statistic::gmean});
  };
  SparsityResult out;
  out.control = index_for(data);
  out.treatment = index_for(subsample_region(data, cfg.region, cfg.keep_fraction, cfg.seed));
  for (std::size_t i = 0; i < weeks.size(); ++i) {
    const double d = std::abs(out.treatment.values[i] / out.control.values[i] - 1.0);
    out.departure.push_back(d);
    out.max_departure = std::max(out.max_departure, d);
    out.mean_departure += d / static_cast<double>(weeks.size());
  }
  out.trend_signs_agree = trend_signs_agree(out.control, out.treatment);
  return out;
}

// ---------------------------------------------------------------------------
// Generalization

struct NllGeneralization {
  double train = 0.0;
  double holdout = 0.0;
  double gap() const { return holdout - train; }
};

template <class Model>
NllGeneralization nll_generalization(const Model& model, std::span<const SaleRecord> train_set,
                                     std::span<const SaleRecord> holdout) {
  if (train_set.empty() || holdout.empty()) throw std::invalid_argument("nll generalization needs non-empty sets");
  return {mean_nll(model, train_set), mean_nll(model, holdout)};
}

// ---------------------------------------------------------------------------
// Report writers

inline void write_projection_csv(std::ostream& out, const ProjectionErrorReport& r) {
  out << "scope,index,mdape,mape,n\n";
  char buf[128];
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%zu", e.mdape, e.mape, e.n);
    out << e.scope << ',' << kind_name(e.kind) << ',' << buf << '\n';
  }
}

inline void write_calibration_csv(std::ostream& out, const std::string& scope, const std::string& index,
                                  const CalibrationReport& r) {
  char buf[64];
  for (std::size_t i = 0; i < r.percentiles.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.percentiles[i], r.observed[i]);
    out << scope << ',' << index << ',' << buf << '\n';
  }
}

inline void write_nemenyi_csv(std::ostream& out, const RankTestReport& r) {
  out << "method,mean_rank,band_low,band_high\n";
  char buf[96];
  for (std::size_t j = 0; j < r.methods.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", r.mean_ranks[j], r.bands[j].first, r.bands[j].second);
    out << r.methods[j] << ',' << buf << '\n';
  }
}

inline nlohmann::json to_json(const RankTestReport& r) {
  return {{"methods", r.methods},
          {"mean_ranks", r.mean_ranks},
          {"n", r.n},
          {"friedman_statistic", r.statistic},
          {"p_value", r.p_value},
          {"alpha", r.alpha},
          {"rejected", r.rejected},
          {"no_discrimination", r.no_discrimination},
          {"critical_difference", r.critical_difference},
          {"best", r.methods[r.best]},
          {"indistinguishable_from_best", r.indistinguishable_from_best}};
}

}  // namespace granular
