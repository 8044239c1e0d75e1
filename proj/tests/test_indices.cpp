#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "granular/indices.hpp"
#include "granular/synthetic.hpp"

using namespace granular;

namespace {

FeatureKey house(const std::string& region) { return {region, PropType::house, {}, {}}; }

DensityTable truth_table(const SyntheticMarket& market, const std::vector<int>& weeks) {
  std::vector<FeatureKey> keys;
  for (const auto& kt : market.truth.keys()) keys.push_back(kt.key);
  return DensityTable::from_function([&](const FeatureKey& k, int w) { return market.truth.mixture(k, w); }, keys, weeks);
}

std::vector<int> span_weeks(int from, int to, int step = 1) {
  std::vector<int> w;
  for (int t = from; t <= to; t += step) w.push_back(t);
  return w;
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 15;
  c.hidden_width = 32;
  c.threads = 1;
  return c;
}

}  // namespace

TEST(Aggregate, EqualWeightTwoNormalsMedianAtMidpoint) {
  const auto table = DensityTable::from_function(
      [](const FeatureKey& k, int) { return GaussianMixture::normal(k.region == "A" ? 12.0 : 14.0, 0.01); },
      {house("A"), house("B")}, {5});
  const auto m = aggregate_density(table, {{house("A"), 0.5}, {house("B"), 0.5}}, 5);
  EXPECT_NEAR(quantile(m, 0.5), 13.0, 1e-9);
  EXPECT_NEAR(statistic_value(m, {Statistic::median}), std::exp(13.0), 1e-9 * std::exp(13.0));
}

TEST(Aggregate, CdfIsWeightedSumOfKeyCdfs) {
  std::vector<FeatureKey> keys{house("A"), house("B"), house("C")};
  const auto table = DensityTable::from_function(
      [](const FeatureKey& k, int) {
        if (k.region == "A") return GaussianMixture({{0.3, 12.8, 0.02}, {0.7, 13.2, 0.05}});
        if (k.region == "B") return GaussianMixture::normal(13.6, 0.08);
        return GaussianMixture({{0.5, 12.1, 0.03}, {0.25, 12.9, 0.1}, {0.25, 14.0, 0.04}});
      },
      keys, {1});
  const std::map<FeatureKey, double> h{{keys[0], 0.2}, {keys[1], 0.5}, {keys[2], 0.3}};
  const auto m = aggregate_density(table, h, 1);
  for (double y = 11.5; y < 15.0; y += 0.05) {
    double expect = 0.0;
    for (const auto& [k, w] : h) expect += w * cdf(table.at(k, 1), y);
    EXPECT_NEAR(cdf(m, y), expect, 1e-12);
  }
}

TEST(Aggregate, SingleKeyScopeEqualsKeySeries) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 3);
  const auto weeks = span_weeks(market.truth.first_week(), market.truth.last_week(), 4);
  const auto table = truth_table(market, weeks);
  const auto weights = compute_population_weights(market.sales, market.truth.first_week(), market.truth.last_week());
  const auto agg = aggregate_density_series(table, weights, region_scope("R2", PropType::house), weeks, "R2/house");
  ASSERT_EQ(agg.prop_type, PropType::house);
  const auto s = index_from_density(agg, {Statistic::median});
  for (std::size_t i = 0; i < weeks.size(); ++i)
    EXPECT_NEAR(std::log(s.values[i]), market.truth.median_log(house("R2"), weeks[i]), 1e-9);
}

TEST(Aggregate, MetroMedianMatchesMonteCarlo) {
  const auto market = generate_synthetic(synthetic_scenario("standard"), 4);
  const int week = market.truth.first_week() + 100;
  const auto table = truth_table(market, {week});
  const auto weights = compute_population_weights(market.sales, market.truth.first_week(), market.truth.last_week());
  const auto h = weights.restricted(metro_scope(market.registry, "M1"));
  const double median = quantile(aggregate_density(table, h, week), 0.5);

  std::mt19937_64 rng(9);
  std::vector<FeatureKey> keys;
  std::vector<double> w;
  for (const auto& [k, x] : h) {
    keys.push_back(k);
    w.push_back(x);
  }
  std::discrete_distribution<std::size_t> pick_key(w.begin(), w.end());
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> draws(200000);
  for (auto& y : draws) {
    const auto& m = table.at(keys[pick_key(rng)], week);
    std::vector<double> cw;
    for (const auto& c : m.components()) cw.push_back(c.weight);
    const auto& c = m.components()[std::discrete_distribution<std::size_t>(cw.begin(), cw.end())(rng)];
    y = c.mean + std::sqrt(c.variance) * z(rng);
  }
  std::nth_element(draws.begin(), draws.begin() + draws.size() / 2, draws.end());
  EXPECT_NEAR(median, draws[draws.size() / 2], 0.01);

  // The pooled median lies between the extreme key medians.
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& k : keys) {
    lo = std::min(lo, quantile(table.at(k, week), 0.5));
    hi = std::max(hi, quantile(table.at(k, week), 0.5));
  }
  EXPECT_GE(median, lo);
  EXPECT_LE(median, hi);
}

TEST(Aggregate, RejectsEmptyScope) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 3);
  const auto table = truth_table(market, {market.truth.first_week()});
  const auto weights = compute_population_weights(market.sales, market.truth.first_week(), market.truth.last_week());
  EXPECT_THROW(aggregate_density_series(table, weights, region_scope("R99"), {market.truth.first_week()}),
               std::invalid_argument);
  EXPECT_THROW(table.at(house("R1"), 1), std::out_of_range);
}

TEST(Statistics, LognormalClosedForms) {
  const DensitySeries s{"x", PropType::house, {1}, {GaussianMixture::normal(13.0, 0.04)}};
  EXPECT_NEAR(index_from_density(s, {Statistic::median}).values[0], std::exp(13.0), 1e-6);
  EXPECT_NEAR(index_from_density(s, {Statistic::gmean}).values[0], std::exp(13.0), 1e-6);
  EXPECT_NEAR(index_from_density(s, {Statistic::mean_price}).values[0], std::exp(13.02), 1e-6);
  EXPECT_NEAR(index_from_density(s, {Statistic::quantile, 0.5}).values[0],
              index_from_density(s, {Statistic::median}).values[0], 1e-6);
  const auto q = index_from_density(s, {Statistic::quantile, 0.2});
  EXPECT_EQ(q.kind, IndexKind::d_quantile);
  EXPECT_EQ(kind_name(q), "d_quantile(0.2)");
  EXPECT_EQ(index_from_density(s, {Statistic::median}, IndexKind::d_subregion).kind, IndexKind::d_subregion);
}

TEST(Statistics, QuantileIndicesDoNotCross) {
  const auto market = generate_synthetic(synthetic_scenario("standard"), 6);
  const auto weeks = span_weeks(market.truth.first_week(), market.truth.last_week(), 8);
  const auto table = truth_table(market, weeks);
  const auto weights = compute_population_weights(market.sales, market.truth.first_week(), market.truth.last_week());
  const auto agg = aggregate_density_series(table, weights, metro_scope(market.registry, "M1"), weeks, "M1");
  EXPECT_FALSE(agg.prop_type.has_value());
  const auto q20 = index_from_density(agg, {Statistic::quantile, 0.2});
  const auto q50 = index_from_density(agg, {Statistic::median});
  const auto q80 = index_from_density(agg, {Statistic::quantile, 0.8});
  for (std::size_t i = 0; i < weeks.size(); ++i) {
    EXPECT_LT(q20.values[i], q50.values[i]);
    EXPECT_LT(q50.values[i], q80.values[i]);
  }
}

TEST(Normalize, RatiosPreserved) {
  IndexSeries s;
  s.weeks = {1, 2, 3};
  s.values = {100.0, 110.0, 121.0};
  const auto n = normalize_index(s, 1);
  EXPECT_DOUBLE_EQ(n.values[0], 1.0);
  EXPECT_NEAR(n.values[1], 1.1, 1e-15);
  EXPECT_NEAR(n.values[2], 1.21, 1e-15);
  EXPECT_THROW(normalize_index(s, 7), std::invalid_argument);
}

TEST(DensityDump, GridCoversMass) {
  const DensitySeries s{"x", std::nullopt, {1044}, {GaussianMixture({{0.5, 12.8, 0.02}, {0.5, 13.4, 0.05}})}};
  const auto j = density_dump(s, 401);
  EXPECT_EQ(j["prop_type"], "combined");
  const auto& grid = j["weeks"][0]["grid"];
  ASSERT_EQ(grid.size(), 401u);
  double area = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    area += 0.5 * (grid[i][1].get<double>() + grid[i - 1][1].get<double>()) * (grid[i][0].get<double>() - grid[i - 1][0].get<double>());
  EXPECT_NEAR(area, 1.0, 1e-4);
  EXPECT_EQ(j["weeks"][0]["date"], "2010-01-04");
  EXPECT_THROW(density_dump(s, 1), std::invalid_argument);
}

TEST(ModelIndex, EmptyAndSingleWeek) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 1);
  auto cfg = small_config();
  cfg.epochs = 2;
  const auto ens = train_ensemble(market.sales, market.registry, cfg, 1);
  const auto empty = region_density_series(ens, house("R1"), {});
  EXPECT_EQ(empty.size(), 0u);
  EXPECT_TRUE(index_from_density(empty, {Statistic::median}).empty());
  EXPECT_THROW(region_density_series(ens, house("R42"), {}), std::exception);
  const auto one = region_density_series(ens, house("R1"), {1100});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(index_from_density(one, {Statistic::median}).size(), 1u);
}

TEST(ModelIndex, ConstantMarketGivesFlatMedian) {
  const auto market = generate_synthetic(synthetic_scenario("constant"), 21);
  const auto ens = train_ensemble(market.sales, market.registry, small_config(), 2);
  const auto weeks = span_weeks(market.truth.first_week(), market.truth.last_week());
  const auto weights = compute_population_weights(market.sales, weeks.front(), weeks.back());
  const auto s = index_from_density(aggregate_density_series(ens, weights, metro_scope(market.registry, "M1"), weeks),
                                    {Statistic::median});
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(std::log(s.values[i]), 13.0, 0.02) << s.weeks[i];
}
