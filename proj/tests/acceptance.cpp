// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 3 5        run only criteria 3 and 5

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "granular/benchmarks.hpp"
#include "granular/indices.hpp"
#include "granular/mdn.hpp"
#include "granular/mixture.hpp"
#include "granular/synthetic.hpp"
#include "granular/validation.hpp"

using namespace granular;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;  // 0 = no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

FeatureKey house(const std::string& region) { return {region, PropType::house, {}, {}}; }

std::vector<int> week_range(int first, int last) {
  std::vector<int> w;
  for (int t = first; t <= last; ++t) w.push_back(t);
  return w;
}

std::pair<int, int> span_of(const Dataset& d) {
  int lo = d.front().week, hi = lo;
  for (const auto& r : d) {
    lo = std::min(lo, r.week);
    hi = std::max(hi, r.week);
  }
  return {lo, hi};
}

// Dwellings in fold 0 of 20 are held out.
std::pair<Dataset, Dataset> holdout_split(const Dataset& d) {
  Dataset train_set, holdout;
  for (const auto& r : d) (fold_of(r.dwelling_id, 20) == 0 ? holdout : train_set).push_back(r);
  return {train_set, holdout};
}

GaussianMixture random_mixture(std::mt19937_64& rng, int k) {
  std::uniform_real_distribution<double> w(0.1, 1.0), mu(11.0, 15.0), var(0.005, 0.3);
  std::vector<Component> c;
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    c.push_back({w(rng), mu(rng), var(rng)});
    total += c.back().weight;
  }
  for (auto& x : c) x.weight /= total;
  return GaussianMixture(c);
}

// ---------------------------------------------------------------------------

Outcome mixture_math() {
  std::mt19937_64 rng(101);
  double worst_identity = 0.0, worst_mass = 0.0, worst_moment = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_mixture(rng, 1 + trial % 8);
    for (int i = 1; i < 200; ++i) {
      const double p = i / 200.0;
      worst_identity = std::max(worst_identity, std::abs(cdf(m, quantile(m, p)) - p));
    }
    // Composite Simpson over +-10 sd.
    const double lo = m.min_mean() - 10.0 * m.max_sd(), hi = m.max_mean() + 10.0 * m.max_sd();
    const int n = 20000;
    const double h = (hi - lo) / n;
    double s = pdf(m, lo) + pdf(m, hi);
    for (int i = 1; i < n; ++i) s += pdf(m, lo + i * h) * (i % 2 ? 4.0 : 2.0);
    worst_mass = std::max(worst_mass, std::abs(s * h / 3.0 - 1.0));
  }
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = random_mixture(rng, 3);
    std::vector<double> w;
    for (const auto& c : m.components()) w.push_back(c.weight);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    std::normal_distribution<double> z(0.0, 1.0);
    double sum = 0.0, sum_log = 0.0;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) {
      const auto& c = m.components()[pick(rng)];
      const double y = c.mean + std::sqrt(c.variance) * z(rng);
      sum += std::exp(y);
      sum_log += y;
    }
    const auto r = moments(m);
    worst_moment = std::max({worst_moment, std::abs(r.mean_price / (sum / draws) - 1.0),
                             std::abs(r.gmean_price / std::exp(sum_log / draws) - 1.0)});
  }
  return {worst_identity < 1e-8 && worst_mass < 1e-6 && worst_moment < 0.002,
          fmt("max |cdf(q(p))-p| %.2e, max |mass-1| %.2e, max moment rel err %.4f", worst_identity, worst_mass, worst_moment)};
}

Outcome gradient_check() {
  const RegionRegistry registry({{"A", "M", {"B"}}, {"B", "M", {"A"}}, {"C", "M", {}}});
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
  const Dataset data{rec("A", PropType::house, 100, 13.1, 3), rec("B", PropType::unit, 101, 12.6, 1),
                     rec("A", PropType::unit, 103, 12.9, 2), rec("C", PropType::house, 102, 13.4, 4),
                     rec("B", PropType::house, 100, 13.0, 3), rec("C", PropType::unit, 104, 12.2, 2)};
  const auto enc = InputEncoding::build(data, registry, {true, false});
  TrainConfig cfg;
  cfg.components = 3;
  cfg.hidden_width = 6;
  cfg.embedding_dim = 3;
  const auto arch = make_architecture(enc, cfg);
  double worst = 0.0;
  for (std::uint64_t point = 0; point < 20; ++point) {
    std::mt19937_64 rng(500 + point);
    auto p = init_params(arch, rng, 13.0, 0.3);
    std::normal_distribution<double> n(0.0, 0.4);
    for (auto& v : p.values()) v += n(rng);
    const auto analytic = nll_loss(p, enc, data).gradient.values();
    double diff = 0.0, norm = 0.0;
    const double eps = 1e-5;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double keep = p.values()[i];
      p.values()[i] = keep + eps;
      const double up = nll_loss(p, enc, data).loss;
      p.values()[i] = keep - eps;
      const double down = nll_loss(p, enc, data).loss;
      p.values()[i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      norm += numeric * numeric;
    }
    worst = std::max(worst, std::sqrt(diff / norm));
  }
  return {worst < 1e-4, fmt("max relative gradient error %.2e over 20 points (%zu parameters)", worst,
                            NetworkParams(arch).values().size())};
}

Outcome density_recovery() {
  const auto market = generate_synthetic(synthetic_scenario("constant"), 31);
  const auto fresh = generate_synthetic(synthetic_scenario("constant"), 32);
  const auto model = train(market.sales, market.registry, TrainConfig{});
  const auto key = house("R1");
  std::map<int, GaussianMixture> by_week;
  for (int w = market.truth.first_week(); w <= market.truth.last_week(); ++w)
    by_week.emplace(w, forward(model, key, w, week_of_year(w)));
  double worst_mean = 0.0;
  for (const auto& [w, m] : by_week) worst_mean = std::max(worst_mean, std::abs(mean_log(m) - 13.0));
  std::vector<double> deciles;
  for (int i = 1; i <= 9; ++i) deciles.push_back(i / 10.0);
  const auto cal = quantile_calibration([&](const SaleRecord& s) -> const GaussianMixture& { return by_week.at(s.week); },
                                        fresh.sales, deciles);
  double worst_cal = 0.0;
  for (std::size_t j = 0; j < deciles.size(); ++j) worst_cal = std::max(worst_cal, std::abs(cal.observed[j] - deciles[j]));
  return {worst_mean < 0.02 && worst_cal < 0.02,
          fmt("%zu sales; max |mean_log-13| %.4f; max |pi_hat-pi| %.4f on %zu fresh sales", market.sales.size(), worst_mean,
              worst_cal, fresh.sales.size())};
}

// Largest |H(t)/H(t0) / truth(t)/truth(t0) - 1| over the published monthly points.
double worst_monthly_deviation(const IndexSeries& index, const std::vector<int>& weeks, const std::vector<double>& delta) {
  const auto monthly = monthly_sample(index);
  const auto truth = [&](int w) { return delta[static_cast<std::size_t>(w - weeks.front())]; };
  double worst = 0.0;
  for (std::size_t i = 0; i < monthly.size(); ++i) {
    const double est = monthly.values[i] / monthly.values[0];
    const double want = std::exp(truth(monthly.weeks[i]) - truth(monthly.weeks[0]));
    worst = std::max(worst, std::abs(est / want - 1.0));
  }
  return worst;
}

Outcome benchmark_recovery() {
  const auto hf = generate_hedonic_fixture(3, 52, 500, 0.05, 41);
  const auto hi = hedonic_index(fit_hedonic(hf.sales));
  const double worst_h = worst_monthly_deviation(hi, hf.weeks, hf.delta);
  const auto rf = generate_repeat_sales_fixture(5000, 104, 0.05, 42);
  const auto ri = fit_repeat_sales(rf.pairs).index;
  const double worst_r = worst_monthly_deviation(ri, rf.weeks, rf.delta);
  return {worst_h < 0.02 && worst_r < 0.02,
          fmt("hedonic max rel dev %.4f over %zu months; repeat-sales max rel dev %.4f over %zu months", worst_h,
              monthly_sample(hi).size(), worst_r, monthly_sample(ri).size())};
}

Outcome projection_ranking() {
  const auto market = generate_synthetic(synthetic_scenario("divergent-trends"), 51);
  ProjectionConfig cfg;
  cfg.folds = 20;
  cfg.ensemble = 8;
  cfg.train.epochs = 20;
  cfg.train.hidden_width = 32;
  cfg.train.seed = 51;
  cfg.kinds = {IndexKind::d_subregion, IndexKind::d_gmean, IndexKind::hedonic, IndexKind::repeat_sales};
  const auto report = kfold_projection_errors(market.sales, market.registry, {"M1"}, cfg);
  std::vector<std::string> names;
  for (auto k : cfg.kinds) names.push_back(kind_name(k));
  const auto ranks = friedman_nemenyi(report.matrices.at("M1").rows, names);
  const double sub = report.find("M1", IndexKind::d_subregion).mdape;
  const double gmean = report.find("M1", IndexKind::d_gmean).mdape;
  std::string table;
  for (std::size_t j = 0; j < names.size(); ++j)
    table += fmt("%s%s mdape %.2f rank %.3f", j ? "; " : "", names[j].c_str(), report.find("M1", cfg.kinds[j]).mdape,
                 ranks.mean_ranks[j]);
  const bool pass = sub < gmean && ranks.rejected && ranks.best == 0;
  return {pass, fmt("%s; n %zu; Friedman p %.3g; CD %.3f; best %s", table.c_str(), ranks.n, ranks.p_value,
                    ranks.critical_difference, names[ranks.best].c_str())};
}

Outcome persistence() {
  const auto market = generate_synthetic(synthetic_scenario("region-noise"), 61);
  TrainConfig tc;
  tc.seed = 61;
  const auto ens = train_ensemble(market.sales, market.registry, tc, 4);
  const auto [first, last] = span_of(market.sales);
  const auto weeks = week_range(first, last);
  const auto weights = compute_population_weights(market.sales, first, last);
  std::vector<FeatureKey> keys;
  for (const auto& [k, h] : weights.weights) keys.push_back(k);
  const auto table = DensityTable::from_ensemble(ens, keys, weeks);
  const auto pairs = pair_repeat_sales(market.sales);
  const auto rows = cdf_persistence_table(table, weights, market.registry, pairs);
  bool metro_wins = !rows.empty();
  std::string detail;
  for (const auto& r : rows) {
    metro_wins &= r.metro > r.subregion;
    detail += fmt("%s/%s metro %.3f subregion %.3f (n %zu); ", r.scope.c_str(), std::string(to_string(r.prop_type)).c_str(),
                  r.metro, r.subregion, r.n);
  }

  auto cfg = synthetic_scenario("region-noise");
  cfg.resale_score_noise = 0.0;
  const auto preserved = generate_synthetic(cfg, 62);
  tc.seed = 62;
  const auto ens2 = train_ensemble(preserved.sales, preserved.registry, tc, 4);
  const auto [f2, l2] = span_of(preserved.sales);
  std::vector<FeatureKey> keys2;
  for (const auto& kt : preserved.truth.keys()) keys2.push_back(kt.key);
  const auto table2 = DensityTable::from_ensemble(ens2, keys2, week_range(f2, l2));
  const auto pairs2 = pair_repeat_sales(preserved.sales);
  const double r_model = cdf_persistence(
      [&](const RepeatSalePair& p, int leg) -> const GaussianMixture& { return table2.at(p.key, leg == 0 ? p.t1 : p.t2); }, pairs2);
  detail += fmt("quantile-preserving pairs %.4f (n %zu)", r_model, pairs2.size());
  return {metro_wins && r_model > 0.95, detail};
}

Outcome skewed_median() {
  const auto market = generate_synthetic(synthetic_scenario("skewed"), 71);
  const auto [train_set, holdout] = holdout_split(market.sales);
  TrainConfig tc;
  tc.seed = 71;
  const auto ens = train_ensemble(train_set, market.registry, tc, 4);
  const auto [first, last] = span_of(market.sales);
  const auto weeks = week_range(first, last);
  const auto weights = compute_population_weights(train_set, first, last);
  const auto ds = aggregate_density_series(ens, weights, metro_scope(market.registry, "M1"), weeks, "M1");
  const double dm_median = delta_median_of_index(index_from_density(ds, {Statistic::median}), holdout);
  const double dm_gmean = delta_median_of_index(index_from_density(ds, {Statistic::gmean}), holdout);
  return {dm_median < dm_gmean,
          fmt("delta-median: D-median %.2f pp, D-gmean %.2f pp on %zu held-out sales", dm_median, dm_gmean, holdout.size())};
}

Outcome sparsity() {
  const auto market = generate_synthetic(synthetic_scenario("standard"), 81);
  SparsityConfig cfg;
  cfg.region = "R3";
  cfg.keep_fraction = 0.1;
  cfg.seed = 81;
  cfg.ensemble = 4;
  cfg.train.seed = 81;
  const auto with_adj = sparsity_experiment(market.sales, market.registry, cfg);
  const auto isolated = market.registry.without_adjacency();
  const auto no_adj = sparsity_experiment(market.sales, isolated, cfg);
  const bool pass = with_adj.max_departure < 0.10 && no_adj.mean_departure > with_adj.mean_departure;
  return {pass, fmt("with adjacency: max %.4f mean %.4f; without: max %.4f mean %.4f; trend signs agree %s", with_adj.max_departure,
                    with_adj.mean_departure, no_adj.max_departure, no_adj.mean_departure,
                    with_adj.trend_signs_agree ? "yes" : "no")};
}

Outcome nll_gap() {
  const auto market = generate_synthetic(synthetic_scenario("standard"), 91);
  const auto [train_set, holdout] = holdout_split(market.sales);
  TrainConfig tc;
  tc.seed = 91;
  const auto model = train(train_set, market.registry, tc);
  const auto g = nll_generalization(model, train_set, holdout);
  return {g.gap() < 0.05, fmt("train %.4f holdout %.4f gap %.4f (%zu / %zu sales)", g.train, g.holdout, g.gap(), train_set.size(),
                              holdout.size())};
}

// Every stage serialized to text; two runs must agree byte for byte.
std::map<std::string, std::string> pipeline_snapshot() {
  std::map<std::string, std::string> out;
  const auto market = generate_synthetic(synthetic_scenario("smoke"), 101);
  std::ostringstream sales;
  write_sales_csv(sales, market.sales);
  out["synth"] = sales.str() + market.truth.to_json().dump();

  TrainConfig tc;
  tc.epochs = 3;
  tc.hidden_width = 16;
  tc.seed = 7;
  const auto ens = train_ensemble(market.sales, market.registry, tc, 2);
  out["train"] = to_json(ens).dump();

  const auto [first, last] = span_of(market.sales);
  const auto weeks = week_range(first, last);
  const auto weights = compute_population_weights(market.sales, first, last);
  const auto ds = aggregate_density_series(ens, weights, metro_scope(market.registry, "M1"), weeks, "M1");
  std::ostringstream idx;
  write_index_csv(idx, {index_from_density(ds, {Statistic::median}), index_from_density(ds, {Statistic::gmean}),
                        index_from_density(ds, {Statistic::quantile, 0.2})});
  out["index"] = idx.str() + density_dump(ds, 20).dump();

  const auto cleaned = filter_outliers(market.sales, market.registry);
  std::ostringstream bench;
  write_index_csv(bench, {hedonic_index(fit_hedonic(cleaned)), fit_repeat_sales(pair_repeat_sales(cleaned)).index});
  out["benchmarks"] = bench.str();

  ProjectionConfig pc;
  pc.folds = 2;
  pc.ensemble = 1;
  pc.train = tc;
  const auto report = kfold_projection_errors(market.sales, market.registry, {"M1"}, pc);
  std::ostringstream proj;
  write_projection_csv(proj, report);
  std::vector<std::string> names;
  for (auto k : pc.kinds) names.push_back(kind_name(k));
  out["validation"] = proj.str() + to_json(friedman_nemenyi(report.matrices.at("M1").rows, names)).dump();

  SparsityConfig sc;
  sc.region = "R2";
  sc.ensemble = 1;
  sc.train = tc;
  const auto sp = sparsity_experiment(market.sales, market.registry, sc);
  std::ostringstream spo;
  write_index_csv(spo, {sp.control, sp.treatment});
  out["sparsity"] = spo.str();
  return out;
}

Outcome determinism() {
  const auto a = pipeline_snapshot();
  const auto b = pipeline_snapshot();
  std::string differing;
  for (const auto& [stage, text] : a)
    if (b.at(stage) != text) differing += (differing.empty() ? "" : ",") + stage;
  std::string stages;
  for (const auto& [stage, text] : a) stages += (stages.empty() ? "" : ",") + stage;
  return {differing.empty(), differing.empty() ? "identical stages: " + stages : "differing stages: " + differing};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "mixture math", 1.0, mixture_math},
      {2, "gradient correctness", 10.0, gradient_check},
      {3, "density recovery", 300.0, density_recovery},
      {4, "benchmark recovery", 60.0, benchmark_recovery},
      {5, "D-subregion best in k-fold projection", 1800.0, projection_ranking},
      {6, "metro CDF persistence above subregion", 600.0, persistence},
      {7, "D-median calibrates the median on skewed market", 600.0, skewed_median},
      {8, "sparsity ablation", 1800.0, sparsity},
      {9, "NLL generalization gap", 300.0, nll_gap},
      {10, "determinism", 0.0, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.limit_seconds <= 0.0 || secs < c.limit_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::string limit = c.limit_seconds > 0.0 ? fmt(" (limit %.0f s%s)", c.limit_seconds, in_time ? "" : ", exceeded") : "";
    std::printf("%s criterion %d: %s | %s | %.1f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs,
                limit.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
