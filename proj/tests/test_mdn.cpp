#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "granular/indices.hpp"
#include "granular/mdn.hpp"
#include "granular/synthetic.hpp"

using namespace granular;

namespace {

struct Fixture {
  RegionRegistry registry;
  Dataset data;
  InputEncoding encoding;
  Architecture arch;
};

// Five records over three regions (one isolated), both property types and
// bedroom categories, so every parameter block is exercised.
Fixture tiny_fixture() {
  Fixture f;
  f.registry = RegionRegistry({{"A", "M", {"B"}}, {"B", "M", {"A"}}, {"C", "M", {}}});
  auto rec = [](std::string region, PropType pt, int week, double y, int beds) {
    SaleRecord r;
    r.dwelling_id = region + std::to_string(week);
    r.region = std::move(region);
    r.prop_type = pt;
    r.week = week;
    r.week_of_year = week_of_year(week);
    r.log_price = y;
    r.bedrooms = beds;
    return r;
  };
  f.data = {rec("A", PropType::house, 100, 13.1, 3), rec("B", PropType::unit, 101, 12.6, 1),
            rec("A", PropType::unit, 103, 12.9, 2), rec("C", PropType::house, 102, 13.4, 4),
            rec("B", PropType::house, 100, 13.0, 3)};
  f.encoding = InputEncoding::build(f.data, f.registry, {true, false});
  TrainConfig cfg;
  cfg.components = 3;
  cfg.hidden_width = 5;
  cfg.embedding_dim = 3;
  f.arch = make_architecture(f.encoding, cfg);
  return f;
}

NetworkParams random_point(const Architecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto p = init_params(arch, rng, 13.0, 0.3);
  std::normal_distribution<double> n(0.0, 0.4);
  for (auto& v : p.values()) v += n(rng);
  return p;
}

double loss_at(const NetworkParams& p, const Fixture& f) { return nll_loss(p, f.encoding, f.data).loss; }

TrainConfig quick_config(int epochs = 10) {
  TrainConfig c;
  c.epochs = epochs;
  c.hidden_width = 32;
  c.threads = 1;
  return c;
}

}  // namespace

TEST(Forward, MixtureInvariantsForArbitraryParameters) {
  const auto f = tiny_fixture();
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto p = random_point(f.arch, s);
    std::mt19937_64 rng(s);
    std::normal_distribution<double> wild(0.0, 30.0);
    if (s % 2) for (auto& v : p.values()) v = wild(rng);
    for (const auto& r : f.data) {
      const auto m = forward(p, f.encoding, key_of(r, f.encoding.resolution), r.week, r.week_of_year);
      double sum = 0.0;
      for (const auto& c : m.components()) {
        sum += c.weight;
        EXPECT_GE(c.variance, GaussianMixture::kVarianceFloor);
        EXPECT_TRUE(std::isfinite(c.mean));
      }
      EXPECT_NEAR(sum, 1.0, 1e-10);
    }
  }
}

TEST(Forward, ZeroParametersGiveUniformWeights) {
  const auto f = tiny_fixture();
  NetworkParams p(f.arch);
  const auto m = forward(p, f.encoding, {"A", PropType::house, 3, {}}, 100, 48);
  for (const auto& c : m.components()) EXPECT_DOUBLE_EQ(c.weight, 1.0 / 3.0);
}

TEST(Forward, IsolatedRegionHasZeroNeighborMean) {
  const auto f = tiny_fixture();
  const auto p = random_point(f.arch, 3);
  RowMatrix means;
  detail::neighbor_means(p, f.encoding, means);
  EXPECT_EQ(means.row(f.encoding.region_row("C")).norm(), 0.0);
  EXPECT_GT(means.row(f.encoding.region_row("A")).norm(), 0.0);
  EXPECT_TRUE((means.row(f.encoding.region_row("A")) - p.block(NetworkParams::region_emb).row(f.encoding.region_row("B"))).isZero(0.0));
  EXPECT_NO_THROW(forward(p, f.encoding, {"C", PropType::house, 4, {}}, 102, 50));
}

TEST(Forward, UnknownRegionThrows) {
  const auto f = tiny_fixture();
  NetworkParams p(f.arch);
  EXPECT_THROW(forward(p, f.encoding, {"Z", PropType::house, {}, {}}, 100, 0), DataError);
}

TEST(Loss, StandardNormalAtItsMean) {
  auto f = tiny_fixture();
  for (auto& r : f.data) r.log_price = 13.0;
  TrainConfig cfg;
  cfg.components = 1;
  cfg.hidden_width = 4;
  cfg.embedding_dim = 3;
  NetworkParams p(make_architecture(f.encoding, cfg));
  p.y_center = 13.0;
  p.y_scale = 1.0;
  p.block(NetworkParams::bo)(0, 2) = std::log(std::expm1(1.0 - GaussianMixture::kVarianceFloor));
  EXPECT_NEAR(nll_loss(p, f.encoding, f.data).loss, 0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(Loss, MatchesMixtureLogDensity) {
  const auto f = tiny_fixture();
  const auto p = random_point(f.arch, 9);
  double expect = 0.0;
  for (const auto& r : f.data)
    expect -= std::log(pdf(forward(p, f.encoding, key_of(r, f.encoding.resolution), r.week, r.week_of_year), r.log_price));
  EXPECT_NEAR(loss_at(p, f), expect / 5.0, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  const auto f = tiny_fixture();
  for (std::uint64_t point = 0; point < 20; ++point) {
    auto p = random_point(f.arch, 100 + point);
    const auto analytic = nll_loss(p, f.encoding, f.data).gradient.values();
    std::vector<double> numeric(analytic.size());
    const double eps = 1e-5;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double keep = p.values()[i];
      p.values()[i] = keep + eps;
      const double up = loss_at(p, f);
      p.values()[i] = keep - eps;
      const double down = loss_at(p, f);
      p.values()[i] = keep;
      numeric[i] = (up - down) / (2.0 * eps);
    }
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      norm += numeric[i] * numeric[i];
      EXPECT_LE(std::abs(analytic[i] - numeric[i]), 1e-4 * std::max(std::abs(numeric[i]), 1e-4)) << "point " << point << " index " << i;
    }
    EXPECT_LT(std::sqrt(diff / norm), 1e-4) << "point " << point;
  }
}

TEST(Loss, DuplicatedBatchLeavesLossUnchanged) {
  const auto f = tiny_fixture();
  const auto p = random_point(f.arch, 4);
  Dataset twice = f.data;
  twice.insert(twice.end(), f.data.begin(), f.data.end());
  const auto a = nll_loss(p, f.encoding, f.data);
  const auto b = nll_loss(p, f.encoding, twice);
  EXPECT_NEAR(a.loss, b.loss, 1e-13);
  for (std::size_t i = 0; i < a.gradient.size(); ++i) EXPECT_NEAR(a.gradient.values()[i], b.gradient.values()[i], 1e-13);
}

TEST(Train, SeedDeterminism) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 1);
  auto cfg = quick_config(3);
  const auto a = train(market.sales, market.registry, cfg);
  const auto b = train(market.sales, market.registry, cfg);
  EXPECT_EQ(a.params.values(), b.params.values());
  EXPECT_EQ(a.meta.epoch_loss, b.meta.epoch_loss);
  cfg.seed = 2;
  EXPECT_NE(train(market.sales, market.registry, cfg).params.values(), a.params.values());
}

TEST(Train, NoJitterLossTraceDeterministic) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 1);
  auto cfg = quick_config(3);
  cfg.jitter_sd_weeks = 0.0;
  EXPECT_EQ(train(market.sales, market.registry, cfg).meta.epoch_loss,
            train(market.sales, market.registry, cfg).meta.epoch_loss);
}

TEST(Train, SmallStepFullBatchLossNonIncreasing) {
  const auto f = tiny_fixture();
  TrainConfig cfg;
  cfg.components = 3;
  cfg.hidden_width = 5;
  cfg.embedding_dim = 3;
  cfg.epochs = 200;
  cfg.batch_size = 5;
  cfg.learning_rate = 1e-4;
  cfg.schedule = LrSchedule::constant;
  cfg.jitter_sd_weeks = 0.0;
  const auto m = train(f.data, f.registry, cfg);
  for (std::size_t i = 1; i < m.meta.epoch_loss.size(); ++i) EXPECT_LE(m.meta.epoch_loss[i], m.meta.epoch_loss[i - 1]);
  EXPECT_LT(m.meta.epoch_loss.back(), m.meta.epoch_loss.front());
}

TEST(Train, FinalNllMatchesRecomputation) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 1);
  const auto m = train(market.sales, market.registry, quick_config(2));
  EXPECT_NEAR(m.meta.final_train_nll, mean_nll(m, market.sales), 1e-12);
  EXPECT_EQ(m.meta.epoch_loss.size(), 2u);
}

TEST(Train, RecoversConstantDensity) {
  const auto market = generate_synthetic(synthetic_scenario("constant"), 5);
  const auto m = train(market.sales, market.registry, TrainConfig{});
  for (int week : {1050, 1090, 1130}) {
    const auto mix = forward(m, {"R1", PropType::house, {}, {}}, week, week_of_year(week));
    const double mean = mean_log(mix);
    double var = 0.0;
    for (const auto& c : mix.components()) var += c.weight * (c.variance + (c.mean - mean) * (c.mean - mean));
    EXPECT_NEAR(mean, 13.0, 0.02) << week;
    EXPECT_NEAR(var / 0.04, 1.0, 0.2) << week;
  }
}

TEST(Train, HoldoutGapSmall) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 12);
  Dataset fit, held;
  for (const auto& r : market.sales) (stable_hash(r.dwelling_id) % 5 == 0 ? held : fit).push_back(r);
  const auto m = train(fit, market.registry, quick_config(15));
  EXPECT_LT(std::abs(mean_nll(m, held) - mean_nll(m, fit)), 0.05);
}

TEST(Train, RejectsBadConfig) {
  const auto f = tiny_fixture();
  TrainConfig cfg;
  cfg.components = 0;
  EXPECT_THROW(train(f.data, f.registry, cfg), std::invalid_argument);
  EXPECT_THROW(train({}, f.registry, TrainConfig{}), DataError);
}

TEST(Ensemble, SingleMemberEqualsModel) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 1);
  const auto ens = train_ensemble(market.sales, market.registry, quick_config(2), 1);
  const FeatureKey key{"R2", PropType::unit, {}, {}};
  const auto a = predict_density(ens, key, 1080);
  const auto b = forward(ens.members[0], key, 1080, week_of_year(1080));
  for (double y = 12.0; y < 14.0; y += 0.05) EXPECT_DOUBLE_EQ(pdf(a, y), pdf(b, y));
  EXPECT_DOUBLE_EQ(mean_nll(ens, market.sales), mean_nll(ens.members[0], market.sales));
}

TEST(Ensemble, IdenticalMembersAndNormalization) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 1);
  auto ens = train_ensemble(market.sales, market.registry, quick_config(2), 1);
  const FeatureKey key{"R1", PropType::house, {}, {}};
  const auto single = predict_density(ens, key, 1060);
  ens.members.push_back(ens.members[0]);
  const auto doubled = predict_density(ens, key, 1060);
  for (double y = 12.0; y < 14.5; y += 0.05) EXPECT_NEAR(pdf(doubled, y), pdf(single, y), 1e-12);
  const double lo = doubled.min_mean() - 10 * doubled.max_sd(), hi = doubled.max_mean() + 10 * doubled.max_sd();
  const int n = 20000;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) integral += (i == 0 || i == n ? 0.5 : 1.0) * pdf(doubled, lo + (hi - lo) * i / n);
  EXPECT_NEAR(integral * (hi - lo) / n, 1.0, 1e-6);
}

TEST(Ensemble, SeedsAreConsecutiveAndDeterministic) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 1);
  auto cfg = quick_config(2);
  cfg.seed = 40;
  const auto a = train_ensemble(market.sales, market.registry, cfg, 3);
  cfg.threads = 3;
  const auto b = train_ensemble(market.sales, market.registry, cfg, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.members[i].meta.seed, 40u + i);
    EXPECT_EQ(a.members[i].params.values(), b.members[i].params.values());
  }
}

TEST(Ensemble, PoolingSmoothsWeeklyNoise) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 3);
  auto cfg = quick_config(15);
  const auto ens = train_ensemble(market.sales, market.registry, cfg, 8);
  const FeatureKey key{"R2", PropType::house, {}, {}};
  std::vector<int> weeks;
  for (int w = 1043; w < 1043 + 104; ++w) weeks.push_back(w);
  auto roughness = [&](const EnsembleModel& e) {
    const auto idx = index_from_density(region_density_series(e, key, weeks), {Statistic::median});
    std::vector<double> d;
    for (std::size_t i = 1; i < idx.size(); ++i) d.push_back(std::abs(std::log(idx.values[i] / idx.values[i - 1])));
    double mean = 0.0;
    for (double x : d) mean += x / static_cast<double>(d.size());
    double var = 0.0;
    for (double x : d) var += (x - mean) * (x - mean) / static_cast<double>(d.size());
    return var;
  };
  std::vector<double> member_var;
  for (const auto& m : ens.members) member_var.push_back(roughness(EnsembleModel{{m}}));
  std::sort(member_var.begin(), member_var.end());
  const double median_member = 0.5 * (member_var[3] + member_var[4]);
  EXPECT_LT(roughness(ens), median_member);
}

TEST(Persistence, RoundTripPredictsIdentically) {
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 1);
  const auto ens = train_ensemble(market.sales, market.registry, quick_config(2), 2);
  const auto path = (std::filesystem::temp_directory_path() / "granular_mdn_roundtrip.json").string();
  save_ensemble(ens, path);
  const auto back = load_ensemble(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.members[i].params.values(), ens.members[i].params.values());
    EXPECT_EQ(back.members[i].meta.epoch_loss, ens.members[i].meta.epoch_loss);
  }
  for (int w : {1043, 1100, 1146}) {
    const auto a = predict_density(ens, {"R3", PropType::unit, {}, {}}, w);
    const auto b = predict_density(back, {"R3", PropType::unit, {}, {}}, w);
    for (double y = 12.0; y < 14.0; y += 0.1) EXPECT_EQ(pdf(a, y), pdf(b, y));
  }
  EXPECT_EQ(mean_nll(back, market.sales), mean_nll(ens, market.sales));
}

TEST(Persistence, RejectsForeignFiles) {
  EXPECT_THROW(ensemble_from_json({{"format", "other"}, {"version", 1}, {"members", nlohmann::json::array()}}), DataError);
  EXPECT_THROW(ensemble_from_json({{"format", "granular-mdn-ensemble"}, {"version", 99}, {"members", nlohmann::json::array()}}),
               DataError);
  EXPECT_THROW(load_ensemble("/nonexistent/model.json"), DataError);
}
