#pragma once

// Seeded synthetic housing markets with a known ground-truth density for
// every (feature key, week).
//
// Each dwelling carries a latent normal score z. A sale at week t prices the
// dwelling at the true mixture's quantile Phi(z). On resale the score moves to
// sqrt(1 - s^2) z + s e with e ~ N(0, 1), so every sale is still marginally
// distributed as the true mixture while s controls how well a dwelling keeps
// its quantile between sales.

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "granular/data.hpp"
#include "granular/mixture.hpp"

namespace granular {

/// One piece of the global log-price path: constant slope until `end_fraction` of the span.
struct TrendSegment {
  double end_fraction = 1.0;
  double slope_per_week = 0.0;
};

struct SyntheticConfig {
  std::string scenario = "standard";
  int n_regions = 6;
  int n_metros = 1;
  int start_week = 1043;
  int n_weeks = 208;
  bool houses = true;
  bool units = true;
  double sales_per_key_week = 6.0;
  int components_per_key = 2;
  std::vector<TrendSegment> trend{{0.4, 0.0025}, {0.6, -0.001}, {1.0, 0.002}};
  /// Region trend multipliers run linearly along the region chain from 1 - spread to 1 + spread.
  double trend_spread = 0.3;
  double base_level = 13.0;
  /// Region price levels alternate around base_level within +- this amount.
  double region_level_spread = 0.3;
  double unit_offset = -0.35;
  double component_sd = 0.2;
  bool right_skewed = false;
  double repeat_fraction = 0.3;
  double resale_score_noise = 0.3;
};

/// Named scenarios used across the test suites and the CLI.
inline SyntheticConfig synthetic_scenario(const std::string& name) {
  SyntheticConfig c;
  c.scenario = name;
  if (name == "standard") return c;
  if (name == "constant") {
    c.n_regions = 1;
    c.units = false;
    c.n_weeks = 100;
    c.sales_per_key_week = 100.0;
    c.components_per_key = 1;
    c.trend.clear();
    c.trend_spread = 0.0;
    c.region_level_spread = 0.0;
    c.component_sd = 0.2;
    return c;
  }
  if (name == "flat") {
    c.trend.clear();
    c.trend_spread = 0.0;
    return c;
  }
  if (name == "divergent-trends") {
    c.trend = {{0.5, 0.003}, {1.0, 0.001}};
    c.trend_spread = 0.8;
    c.resale_score_noise = 0.15;
    return c;
  }
  if (name == "region-noise") {
    c.region_level_spread = 0.5;
    c.resale_score_noise = 0.5;
    return c;
  }
  if (name == "skewed") {
    c.right_skewed = true;
    c.trend_spread = 0.0;
    return c;
  }
  if (name == "smoke") {
    c.n_regions = 4;
    c.n_weeks = 104;
    c.sales_per_key_week = 4.0;
    return c;
  }
  throw std::invalid_argument("unknown synthetic scenario '" + name + "'");
}

inline std::vector<std::string> synthetic_scenario_names() {
  return {"standard", "constant", "flat", "divergent-trends", "region-noise", "skewed", "smoke"};
}

/// The true mixture for every key and week of a synthetic run.
class SyntheticGroundTruth {
 public:
  struct KeyTruth {
    FeatureKey key;
    double level = 0.0;
    double trend_multiplier = 1.0;
    std::vector<Component> shape;  // means relative to level
  };

  SyntheticGroundTruth() = default;
  SyntheticGroundTruth(SyntheticConfig config, std::uint64_t seed, std::vector<KeyTruth> keys)
      : config_(std::move(config)), seed_(seed), keys_(std::move(keys)) {}

  const SyntheticConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const KeyTruth> keys() const { return keys_; }
  int first_week() const { return config_.start_week; }
  int last_week() const { return config_.start_week + config_.n_weeks - 1; }

  /// Global log-price path relative to the first week.
  double trend(int week) const {
    const double span = std::max(1, config_.n_weeks);
    const double x = week - config_.start_week;
    double g = 0.0, pos = 0.0;
    for (const auto& seg : config_.trend) {
      const double end = seg.end_fraction * span;
      if (x <= pos) break;
      g += seg.slope_per_week * (std::min(x, end) - pos);
      pos = end;
    }
    return g;
  }

  const KeyTruth& truth_for(const FeatureKey& key) const {
    for (const auto& k : keys_)
      if (k.key == key) return k;
    throw std::out_of_range("no ground truth for key " + to_string(key));
  }

  GaussianMixture mixture(const FeatureKey& key, int week) const {
    const auto& kt = truth_for(key);
    const double shift = kt.level + kt.trend_multiplier * trend(week);
    std::vector<Component> comps = kt.shape;
    for (auto& c : comps) c.mean += shift;
    return GaussianMixture(std::move(comps));
  }

  double median_log(const FeatureKey& key, int week) const { return quantile(mixture(key, week), 0.5); }

  nlohmann::json to_json() const {
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& kt : keys_) {
      nlohmann::json weeks = nlohmann::json::array();
      for (int w = first_week(); w <= last_week(); ++w) {
        auto j = granular::to_json(mixture(kt.key, w));
        j["week"] = w;
        weeks.push_back(std::move(j));
      }
      keys.push_back({{"region", kt.key.region},
                      {"prop_type", std::string(to_string(kt.key.prop_type))},
                      {"level", kt.level},
                      {"trend_multiplier", kt.trend_multiplier},
                      {"weeks", std::move(weeks)}});
    }
    nlohmann::json trend = nlohmann::json::array();
    for (const auto& s : config_.trend) trend.push_back({{"end_fraction", s.end_fraction}, {"slope_per_week", s.slope_per_week}});
    return {{"scenario", config_.scenario}, {"seed", seed_}, {"trend", trend}, {"keys", std::move(keys)}};
  }

 private:
  SyntheticConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<KeyTruth> keys_;
};

struct SyntheticMarket {
  Dataset sales;
  RegionRegistry registry;
  SyntheticGroundTruth truth;
};

/// Region chain R1..Rn; each region borders its predecessor and successor.
/// Metros are contiguous blocks M1..Mm.
inline RegionRegistry synthetic_registry(int n_regions, int n_metros) {
  std::vector<RegionRegistry::Region> regions;
  const int per_metro = (n_regions + n_metros - 1) / n_metros;
  for (int i = 0; i < n_regions; ++i) {
    RegionRegistry::Region r;
    r.id = "R" + std::to_string(i + 1);
    r.metro = "M" + std::to_string(i / per_metro + 1);
    if (i > 0) r.neighbors.push_back("R" + std::to_string(i));
    if (i + 1 < n_regions) r.neighbors.push_back("R" + std::to_string(i + 2));
    regions.push_back(std::move(r));
  }
  return RegionRegistry(std::move(regions));
}

inline void validate(const SyntheticConfig& c) {
  if (c.n_regions <= 0 || c.n_metros <= 0 || c.n_metros > c.n_regions || c.n_weeks <= 0 ||
      !(c.sales_per_key_week > 0.0) || c.components_per_key < 1 || c.components_per_key > 3 ||
      !(c.component_sd > 0.0) || (!c.houses && !c.units) || c.start_week < 0)
    throw std::invalid_argument("invalid synthetic config: counts and scales must be positive");
  if (c.repeat_fraction < 0.0 || c.repeat_fraction > 1.0 || c.resale_score_noise < 0.0 || c.resale_score_noise > 1.0)
    throw std::invalid_argument("invalid synthetic config: fractions must lie in [0, 1]");
}

inline SyntheticMarket generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  validate(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SyntheticMarket out;
  out.registry = synthetic_registry(config.n_regions, config.n_metros);

  // Per-key truths.
  std::vector<SyntheticGroundTruth::KeyTruth> truths;
  for (int i = 0; i < config.n_regions; ++i) {
    const double pos = config.n_regions > 1 ? static_cast<double>(i) / (config.n_regions - 1) : 0.5;
    const double multiplier = 1.0 - config.trend_spread + 2.0 * config.trend_spread * pos;
    const double level_jitter = config.region_level_spread * (i % 2 == 0 ? 1.0 : -1.0) * (0.5 + 0.5 * unif(rng));
    for (PropType pt : {PropType::house, PropType::unit}) {
      if ((pt == PropType::house && !config.houses) || (pt == PropType::unit && !config.units)) continue;
      SyntheticGroundTruth::KeyTruth kt;
      kt.key = FeatureKey{"R" + std::to_string(i + 1), pt, std::nullopt, std::nullopt};
      kt.level = config.base_level + level_jitter + (pt == PropType::unit ? config.unit_offset : 0.0);
      kt.trend_multiplier = multiplier;
      const double v = config.component_sd * config.component_sd;
      if (config.right_skewed) {
        kt.shape = {{0.65, -0.15, 0.6 * v}, {0.35, 0.45, 1.8 * v}};
      } else if (config.components_per_key == 1) {
        kt.shape = {{1.0, 0.0, v}};
      } else if (config.components_per_key == 2) {
        const double w = 0.55 + 0.2 * unif(rng);
        kt.shape = {{w, -0.12, 0.8 * v}, {1.0 - w, 0.12 * w / (1.0 - w), 1.2 * v}};
      } else {
        kt.shape = {{0.3, -0.3, 0.6 * v}, {0.45, 0.0, 0.9 * v}, {0.25, 0.4, 1.3 * v}};
      }
      truths.push_back(std::move(kt));
    }
  }
  out.truth = SyntheticGroundTruth(config, seed, truths);

  struct Dwelling {
    std::string id;
    double score;
    int last_week;
    int bedrooms;
    double bathrooms, parking, land_area;
  };
  std::vector<std::vector<Dwelling>> stock(truths.size());
  std::poisson_distribution<int> sales_count(config.sales_per_key_week);
  const double keep = std::sqrt(1.0 - config.resale_score_noise * config.resale_score_noise);
  std::size_t next_id = 0;

  for (int week = config.start_week; week < config.start_week + config.n_weeks; ++week) {
    for (std::size_t k = 0; k < truths.size(); ++k) {
      const auto& kt = truths[k];
      const GaussianMixture m = out.truth.mixture(kt.key, week);
      auto& pool = stock[k];
      // Only dwellings last sold in an earlier week can resell now.
      std::size_t eligible = pool.size();
      while (eligible > 0 && pool[eligible - 1].last_week == week) --eligible;
      const int n = sales_count(rng);
      for (int s = 0; s < n; ++s) {
        Dwelling* d = nullptr;
        if (eligible > 0 && unif(rng) < config.repeat_fraction) {
          std::uniform_int_distribution<std::size_t> pick(0, eligible - 1);
          const std::size_t idx = pick(rng);
          // Move the picked dwelling to the back so eligibility stays a prefix.
          std::swap(pool[idx], pool[eligible - 1]);
          --eligible;
          Dwelling moved = pool[eligible];
          pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(eligible));
          moved.score = keep * moved.score + config.resale_score_noise * std_normal(rng);
          moved.last_week = week;
          pool.push_back(std::move(moved));
          d = &pool.back();
        } else {
          Dwelling fresh;
          fresh.id = "D" + std::to_string(++next_id);
          fresh.score = std_normal(rng);
          fresh.last_week = week;
          const double z = fresh.score;
          fresh.bedrooms = std::clamp(static_cast<int>(std::lround(3.0 + 0.8 * z + 0.6 * std_normal(rng))), 1, 6);
          fresh.bathrooms = std::clamp(std::round(1.5 + 0.5 * z + 0.5 * std_normal(rng)), 1.0, 4.0);
          fresh.parking = std::clamp(std::round(1.2 + 0.4 * z + 0.6 * std_normal(rng)), 0.0, 4.0);
          fresh.land_area = std::exp(6.3 + 0.25 * z + 0.3 * std_normal(rng));
          pool.push_back(std::move(fresh));
          d = &pool.back();
        }
        const double u = std::clamp(normal_cdf(d->score), 1e-12, 1.0 - 1e-12);
        SaleRecord r;
        r.dwelling_id = d->id;
        r.log_price = quantile(m, u);
        r.week = week;
        r.week_of_year = week_of_year(week);
        r.region = kt.key.region;
        r.prop_type = kt.key.prop_type;
        r.bedrooms = d->bedrooms;
        r.extra_hedonic["bedrooms"] = d->bedrooms;
        r.extra_hedonic["bathrooms"] = d->bathrooms;
        r.extra_hedonic["parking"] = d->parking;
        if (kt.key.prop_type == PropType::house) {
          r.land_band = land_band_of(d->land_area);
          r.extra_hedonic["log_land_area"] = std::log(d->land_area);
        }
        out.sales.push_back(std::move(r));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generative fixtures for the linear benchmarks.

struct HedonicFixture {
  Dataset sales;
  RegionRegistry registry;
  std::vector<int> weeks;
  std::vector<double> delta;  // true time effects, one per week
  std::map<std::string, double> beta;
};

/// Log prices drawn exactly from a time-dummy hedonic model:
/// y = intercept + region effect + beta'z + delta_t + noise.
inline HedonicFixture generate_hedonic_fixture(int n_regions, int n_weeks, int sales_per_week, double noise_sd,
                                               std::uint64_t seed, int start_week = 1043) {
  if (n_regions <= 0 || n_weeks <= 0 || sales_per_week <= 0 || noise_sd < 0.0)
    throw std::invalid_argument("invalid hedonic fixture config");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nz(0.0, 1.0);
  std::uniform_int_distribution<int> pick_region(0, n_regions - 1);
  HedonicFixture f;
  f.registry = synthetic_registry(n_regions, 1);
  f.beta = {{"bedrooms", 0.08}, {"bathrooms", 0.05}, {"parking", 0.03}, {"log_land_area", 0.3}};
  std::vector<double> region_effect(static_cast<std::size_t>(n_regions));
  for (auto& e : region_effect) e = 0.3 * nz(rng);
  double level = 0.0;
  for (int t = 0; t < n_weeks; ++t) {
    level += 0.002 + 0.01 * nz(rng);
    f.weeks.push_back(start_week + t);
    f.delta.push_back(level);
  }
  std::size_t id = 0;
  for (int t = 0; t < n_weeks; ++t) {
    for (int s = 0; s < sales_per_week; ++s) {
      SaleRecord r;
      r.dwelling_id = "H" + std::to_string(++id);
      r.week = start_week + t;
      r.week_of_year = week_of_year(r.week);
      const int reg = pick_region(rng);
      r.region = "R" + std::to_string(reg + 1);
      r.prop_type = PropType::house;
      const int bedrooms = std::clamp(static_cast<int>(std::lround(3.0 + nz(rng))), 1, 6);
      r.bedrooms = bedrooms;
      r.extra_hedonic["bedrooms"] = bedrooms;
      r.extra_hedonic["bathrooms"] = std::clamp(std::round(1.5 + 0.7 * nz(rng)), 1.0, 4.0);
      r.extra_hedonic["parking"] = std::clamp(std::round(1.2 + 0.8 * nz(rng)), 0.0, 4.0);
      r.extra_hedonic["log_land_area"] = 6.3 + 0.4 * nz(rng);
      double y = 11.5 + region_effect[static_cast<std::size_t>(reg)] + f.delta[static_cast<std::size_t>(t)];
      for (const auto& [name, b] : f.beta) y += b * r.extra_hedonic.at(name);
      r.log_price = y + noise_sd * nz(rng);
      f.sales.push_back(std::move(r));
    }
  }
  return f;
}

struct RepeatSalesFixture {
  std::vector<RepeatSalePair> pairs;
  std::vector<int> weeks;
  std::vector<double> delta;  // true log index, delta at the first week is 0
};

/// Pairs whose log growth is delta_{t2} - delta_{t1} plus Gaussian noise.
inline RepeatSalesFixture generate_repeat_sales_fixture(int n_pairs, int n_weeks, double noise_sd, std::uint64_t seed,
                                                        int start_week = 1043) {
  if (n_pairs <= 0 || n_weeks < 2 || noise_sd < 0.0) throw std::invalid_argument("invalid repeat-sales fixture config");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nz(0.0, 1.0);
  std::uniform_int_distribution<int> pick_week(0, n_weeks - 1);
  RepeatSalesFixture f;
  double level = 0.0;
  for (int t = 0; t < n_weeks; ++t) {
    if (t > 0) level += 0.003 * std::sin(t / 15.0) + 0.0015;
    f.weeks.push_back(start_week + t);
    f.delta.push_back(level);
  }
  for (int i = 0; i < n_pairs; ++i) {
    int a = pick_week(rng), b = pick_week(rng);
    while (a == b) b = pick_week(rng);
    if (a > b) std::swap(a, b);
    RepeatSalePair p;
    p.dwelling_id = "P" + std::to_string(i + 1);
    p.t1 = start_week + a;
    p.t2 = start_week + b;
    p.y1 = 13.0 + 0.4 * nz(rng);
    p.y2 = p.y1 + f.delta[static_cast<std::size_t>(b)] - f.delta[static_cast<std::size_t>(a)] + noise_sd * nz(rng);
    p.key = FeatureKey{"R1", PropType::house, std::nullopt, std::nullopt};
    f.pairs.push_back(std::move(p));
  }
  return f;
}

}  // namespace granular
