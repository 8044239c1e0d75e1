// granular: synthesize markets, train density ensembles, emit indices and
// run the validation protocol.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "granular/benchmarks.hpp"
#include "granular/indices.hpp"
#include "granular/synthetic.hpp"
#include "granular/validation.hpp"

namespace fs = std::filesystem;
using namespace granular;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kEnvPrefix = "GRANULAR_";

std::string env_name(const std::string& flag) {
  std::string s = kEnvPrefix;
  for (char c : flag) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

struct Options {
  std::string data, registry, out = "out", model, scenario = "standard";
  std::uint64_t seed = 1;
  int ensemble = 8;
  int components = 8;
  double jitter_weeks = 2.0;
  std::string weights_cutoff;
  int folds = 20;
  std::string percentiles;
  int epochs = 30;
  int hidden = 64;
  int batch = 256;
  double learning_rate = 3e-3;
  int threads = 0;
  std::string base_date;
  int grid_points = 200;
  std::string checks = "kfold,calibration,persistence,ranks,sparsity,nll";
  std::string sparsity_region;
  double keep_fraction = 0.1;
  int sparsity_ensemble = 4;
  std::string window_start, window_end;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  return f;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

/// "20,80" or "0.2,0.8" as probabilities.
std::vector<double> parse_percentiles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    double v = 0.0;
    try {
      v = std::stod(item);
    } catch (const std::exception&) {
      throw UsageError("invalid percentile '" + item + "'");
    }
    if (v >= 1.0) v /= 100.0;
    if (!(v > 0.0 && v < 1.0)) throw UsageError("percentile '" + item + "' outside (0, 100)");
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// A week number or a YYYY-MM-DD date.
std::optional<int> parse_week(const std::string& s, const char* what) {
  if (s.empty()) return std::nullopt;
  try {
    if (s.find('-') != std::string::npos) return discretize_time(parse_date(s));
    std::size_t used = 0;
    const int w = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return w;
  } catch (const std::exception&) {
    throw UsageError(std::string("invalid ") + what + " '" + s + "'");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

TrainConfig train_config(const Options& o) {
  TrainConfig c;
  c.components = o.components;
  c.epochs = o.epochs;
  c.batch_size = o.batch;
  c.learning_rate = o.learning_rate;
  c.jitter_sd_weeks = o.jitter_weeks;
  c.hidden_width = o.hidden;
  c.seed = o.seed;
  c.threads = o.threads;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

struct Loaded {
  RegionRegistry registry;
  Dataset sales;
};

Loaded load_inputs(const Options& o) {
  if (o.data.empty() || o.registry.empty()) throw UsageError("--data and --registry are required");
  Loaded l;
  l.registry = RegionRegistry::load(o.registry);
  auto load = parse_sales_csv(o.data, l.registry);
  for (const auto& r : load.rejects) std::cerr << "warning: row " << r.row << " rejected: " << r.reason << '\n';
  l.sales = std::move(load.records);
  if (l.sales.empty()) throw DataError("no valid sales in " + o.data);
  return l;
}

std::pair<int, int> week_span(const Dataset& d) {
  int lo = d.front().week, hi = lo;
  for (const auto& r : d) {
    lo = std::min(lo, r.week);
    hi = std::max(hi, r.week);
  }
  return {lo, hi};
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  auto f = open_out(p);
  f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

int cmd_synth(const Options& o, const SyntheticConfig& base) {
  ensure_dir(o.out);
  const auto market = generate_synthetic(base, o.seed);
  {
    auto f = open_out(fs::path(o.out) / "sales.csv");
    write_sales_csv(f, market.sales);
  }
  write_json(fs::path(o.out) / "registry.json", market.registry.to_json());
  write_json(fs::path(o.out) / "truth.json", market.truth.to_json());
  std::cout << "wrote " << market.sales.size() << " sales to " << o.out << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const auto in = load_inputs(o);
  ensure_dir(o.out);
  if (o.ensemble < 1) throw UsageError("--ensemble must be at least 1");
  const auto cfg = train_config(o);
  const auto ens = train_ensemble(in.sales, in.registry, cfg, o.ensemble);
  const double final_nll = mean_nll(ens, in.sales);
  save_ensemble(ens, (fs::path(o.out) / "model.json").string());
  auto log = open_out(fs::path(o.out) / "training_log.csv");
  log << "member,seed,epoch,nll\n";
  for (std::size_t m = 0; m < ens.members.size(); ++m) {
    const auto& meta = ens.members[m].meta;
    for (std::size_t e = 0; e < meta.epoch_loss.size(); ++e)
      log << m << ',' << meta.seed << ',' << e + 1 << ',' << fmt(meta.epoch_loss[e]) << '\n';
    log << m << ',' << meta.seed << ",final," << fmt(meta.final_train_nll) << '\n';
  }
  log << "ensemble," << o.seed << ",final," << fmt(final_nll) << '\n';
  std::cout << "ensemble of " << ens.size() << " trained; train NLL " << fmt6(final_nll) << '\n';
  return 0;
}

int cmd_index(const Options& o) {
  if (o.model.empty()) throw UsageError("--model is required");
  if (!fs::exists(o.model)) throw DataError("model file " + o.model + " not found");
  const auto in = load_inputs(o);
  const auto ens = load_ensemble(o.model);
  ensure_dir(o.out);
  const auto quantiles = parse_percentiles(o.percentiles);
  const auto [first, last] = week_span(in.sales);
  const int cutoff = parse_week(o.weights_cutoff, "weights cutoff").value_or(last);
  const auto base = parse_week(o.base_date, "base date");
  const auto res = ens.members.at(0).config.resolution;
  const auto weights = compute_population_weights(in.sales, first, cutoff, res);

  std::vector<int> weeks;
  for (int w = first; w <= last; ++w) weeks.push_back(w);
  std::vector<FeatureKey> keys;
  for (const auto& [k, h] : weights.weights) keys.push_back(k);
  const auto table = DensityTable::from_ensemble(ens, keys, weeks);

  auto finish = [&](IndexSeries s) { return base ? normalize_index(s, *base) : s; };
  std::vector<IndexSeries> series;
  nlohmann::json dumps = nlohmann::json::array();
  for (const auto& metro : in.registry.metros()) {
    std::vector<std::pair<std::string, std::optional<PropType>>> scopes;
    scopes.emplace_back(metro, std::nullopt);
    for (PropType pt : {PropType::house, PropType::unit})
      scopes.emplace_back(metro + "/" + std::string(to_string(pt)), pt);
    for (const auto& [name, pt] : scopes) {
      const auto filter = metro_scope(in.registry, metro, pt);
      if (weights.restricted(filter).empty()) continue;
      const auto ds = aggregate_density_series(table, weights, filter, weeks, name);
      series.push_back(finish(index_from_density(ds, {Statistic::median})));
      series.push_back(finish(index_from_density(ds, {Statistic::gmean})));
      for (double p : quantiles) series.push_back(finish(index_from_density(ds, {Statistic::quantile, p})));
      dumps.push_back(density_dump(ds, o.grid_points));
    }
    Dataset scoped;
    for (const auto& r : in.sales)
      if (in.registry.metro_of(r.region) == metro) scoped.push_back(r);
    if (scoped.empty()) continue;
    const auto cleaned = filter_outliers(scoped, in.registry);
    auto hed = monthly_sample(hedonic_index(fit_hedonic(cleaned, default_hedonic_covariates(), {}, metro)));
    if (base) hed = normalize_index(hed, *std::min_element(hed.weeks.begin(), hed.weeks.end(), [&](int a, int b) {
      return std::abs(a - *base) < std::abs(b - *base);
    }));
    series.push_back(hed);
    const auto pairs = pair_repeat_sales(cleaned, res);
    if (!pairs.empty()) {
      auto rs = monthly_sample(fit_repeat_sales(pairs, {}, metro).index);
      if (!rs.empty()) series.push_back(rs);
    }
  }
  for (const auto& k : keys) {
    DensitySeries ds;
    ds.scope = k.region + "/" + std::string(to_string(k.prop_type));
    ds.prop_type = k.prop_type;
    ds.weeks = weeks;
    for (int w : weeks) ds.mixtures.push_back(table.at(k, w));
    series.push_back(finish(index_from_density(ds, {Statistic::median}, IndexKind::d_subregion)));
    dumps.push_back(density_dump(ds, o.grid_points));
  }
  {
    auto f = open_out(fs::path(o.out) / "indices.csv");
    write_index_csv(f, series);
  }
  write_json(fs::path(o.out) / "densities.json", dumps);
  std::cout << "wrote " << series.size() << " index series to " << o.out << '\n';
  return 0;
}

int cmd_validate(const Options& o) {
  const auto in = load_inputs(o);
  ensure_dir(o.out);
  const auto checks = split_list(o.checks);
  const std::set<std::string> known{"kfold", "calibration", "persistence", "ranks", "sparsity", "nll"};
  for (const auto& c : checks)
    if (!known.count(c)) throw UsageError("unknown check '" + c + "'");
  auto wants = [&](const char* c) { return std::find(checks.begin(), checks.end(), c) != checks.end(); };
  const auto cfg = train_config(o);
  auto grid = parse_percentiles(o.percentiles.empty() ? "10,20,30,40,50,60,70,80,90" : o.percentiles);
  const auto [first, last] = week_span(in.sales);
  const int cutoff = parse_week(o.weights_cutoff, "weights cutoff").value_or(last);
  std::vector<std::string> metros(in.registry.metros().begin(), in.registry.metros().end());
  nlohmann::json summary;

  if (wants("kfold") || wants("ranks")) {
    ProjectionConfig pc;
    pc.folds = o.folds;
    pc.ensemble = o.ensemble;
    pc.train = cfg;
    pc.weights_cutoff = cutoff;
    pc.window_start = parse_week(o.window_start, "window start");
    pc.window_end = parse_week(o.window_end, "window end");
    pc.threads = o.threads;
    const auto report = kfold_projection_errors(in.sales, in.registry, metros, pc);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    {
      auto f = open_out(fs::path(o.out) / "projection_errors.csv");
      write_projection_csv(f, report);
    }
    if (wants("ranks")) {
      nlohmann::json ranks = nlohmann::json::object();
      auto f = open_out(fs::path(o.out) / "nemenyi.csv");
      f << "scope,method,mean_rank,band_low,band_high\n";
      for (const auto& [scope, m] : report.matrices) {
        if (m.rows.size() < 10) continue;
        std::vector<std::string> names;
        for (auto k : m.kinds) names.push_back(kind_name(k));
        const auto rt = friedman_nemenyi(m.rows, names);
        ranks[scope] = to_json(rt);
        for (std::size_t j = 0; j < names.size(); ++j)
          f << scope << ',' << names[j] << ',' << fmt6(rt.mean_ranks[j]) << ',' << fmt6(rt.bands[j].first) << ','
            << fmt6(rt.bands[j].second) << '\n';
      }
      write_json(fs::path(o.out) / "rank_tests.json", ranks);
    }
    for (const auto& e : report.entries)
      summary["projection"][e.scope][kind_name(e.kind)] = {{"mdape", e.mdape}, {"mape", e.mape}, {"n", e.n}};
  }

  const bool need_model = wants("calibration") || wants("persistence") || wants("nll");
  if (need_model) {
    // One ensemble on the dwellings outside a 1-in-20 holdout group.
    Dataset train_set, holdout;
    for (const auto& r : in.sales) (fold_of(r.dwelling_id, 20) == 0 ? holdout : train_set).push_back(r);
    if (train_set.empty() || holdout.empty()) throw DataError("too few dwellings for a holdout split");
    const auto ens = train_ensemble(train_set, in.registry, cfg, o.ensemble);

    if (wants("nll")) {
      const auto g = nll_generalization(ens, train_set, holdout);
      write_json(fs::path(o.out) / "nll.json", {{"train", g.train}, {"holdout", g.holdout}, {"gap", g.gap()}});
      summary["nll"] = {{"train", g.train}, {"holdout", g.holdout}, {"gap", g.gap()}};
    }
    if (wants("calibration") || wants("persistence")) {
      const auto weights = compute_population_weights(in.sales, first, cutoff, cfg.resolution);
      std::set<FeatureKey> key_set;
      for (const auto& [k, h] : weights.weights) key_set.insert(k);
      for (const auto& r : in.sales) key_set.insert(key_of(r, cfg.resolution));
      std::vector<int> weeks;
      for (int w = first; w <= last; ++w) weeks.push_back(w);
      const auto table = DensityTable::from_ensemble(ens, std::vector<FeatureKey>(key_set.begin(), key_set.end()), weeks);

      if (wants("calibration")) {
        auto f = open_out(fs::path(o.out) / "calibration.csv");
        f << "scope,density,percentile,observed\n";
        auto d = open_out(fs::path(o.out) / "delta_median.csv");
        d << "scope,index,delta_median\n";
        for (const auto& metro : metros) {
          Dataset scoped;
          for (const auto& r : in.sales)
            if (in.registry.metro_of(r.region) == metro) scoped.push_back(r);
          if (scoped.empty()) continue;
          std::map<std::pair<int, int>, GaussianMixture> metro_density;
          for (PropType pt : {PropType::house, PropType::unit}) {
            const auto restricted = weights.restricted(metro_scope(in.registry, metro, pt));
            if (restricted.empty()) continue;
            for (int w : weeks) metro_density.emplace(std::pair{static_cast<int>(pt), w}, aggregate_density(table, restricted, w));
          }
          const auto metro_cal = quantile_calibration(
              [&](const SaleRecord& r) -> const GaussianMixture& { return metro_density.at({static_cast<int>(r.prop_type), r.week}); },
              scoped, grid);
          write_calibration_csv(f, metro, "metro", metro_cal);
          const auto key_cal = quantile_calibration(
              [&](const SaleRecord& r) -> const GaussianMixture& { return table.at(key_of(r, cfg.resolution), r.week); }, scoped,
              grid);
          write_calibration_csv(f, metro, "subregion", key_cal);

          const auto all = weights.restricted(metro_scope(in.registry, metro));
          DensitySeries combined;
          combined.scope = metro;
          combined.weeks = weeks;
          for (int w : weeks) combined.mixtures.push_back(aggregate_density(table, all, w));
          const double dm_median = delta_median_of_index(index_from_density(combined, {Statistic::median}), scoped);
          const double dm_gmean = delta_median_of_index(index_from_density(combined, {Statistic::gmean}), scoped);
          const auto hed = hedonic_index(fit_hedonic(filter_outliers(scoped, in.registry), default_hedonic_covariates(), {}, metro));
          const double dm_hed = delta_median_of_index(hed, scoped);
          std::vector<double> regional;
          for (const auto& region : in.registry.regions_in_metro(metro)) {
            Dataset rs;
            for (const auto& r : scoped)
              if (r.region == region) rs.push_back(r);
            if (rs.empty()) continue;
            regional.push_back(quantile_calibration(
                                   [&](const SaleRecord& r) -> const GaussianMixture& {
                                     return table.at(key_of(r, cfg.resolution), r.week);
                                   },
                                   rs, {0.5})
                                   .delta_median);
          }
          const double dm_sub = median_of(regional);
          d << metro << ",d_median," << fmt6(dm_median) << '\n'
            << metro << ",d_gmean," << fmt6(dm_gmean) << '\n'
            << metro << ",hedonic," << fmt6(dm_hed) << '\n'
            << metro << ",d_subregion," << fmt6(dm_sub) << '\n';
          summary["delta_median"][metro] = {{"d_median", dm_median}, {"d_gmean", dm_gmean}, {"hedonic", dm_hed}, {"d_subregion", dm_sub}};
        }
      }
      if (wants("persistence")) {
        const auto pairs = pair_repeat_sales(in.sales, cfg.resolution);
        const auto rows = cdf_persistence_table(table, weights, in.registry, pairs);
        auto f = open_out(fs::path(o.out) / "persistence.csv");
        f << "scope,prop_type,metro,subregion,n\n";
        for (const auto& r : rows) {
          f << r.scope << ',' << to_string(r.prop_type) << ',' << fmt6(r.metro) << ',' << fmt6(r.subregion) << ',' << r.n << '\n';
          summary["persistence"][r.scope][std::string(to_string(r.prop_type))] = {{"metro", r.metro}, {"subregion", r.subregion}};
        }
      }
    }
  }

  if (wants("sparsity")) {
    SparsityConfig sc;
    sc.region = o.sparsity_region.empty() ? in.registry.regions().front().id : o.sparsity_region;
    sc.keep_fraction = o.keep_fraction;
    sc.seed = o.seed;
    sc.ensemble = o.sparsity_ensemble;
    sc.train = cfg;
    const auto r = sparsity_experiment(in.sales, in.registry, sc);
    auto f = open_out(fs::path(o.out) / "sparsity.csv");
    f << "week,date,control,treatment,departure\n";
    for (std::size_t i = 0; i < r.control.size(); ++i)
      f << r.control.weeks[i] << ',' << week_date_string(r.control.weeks[i]) << ',' << fmt(r.control.values[i]) << ','
        << fmt(r.treatment.values[i]) << ',' << fmt(r.departure[i]) << '\n';
    summary["sparsity"] = {{"region", sc.region},
                           {"keep_fraction", sc.keep_fraction},
                           {"max_departure", r.max_departure},
                           {"mean_departure", r.mean_departure},
                           {"trend_signs_agree", r.trend_signs_agree}};
  }
  write_json(fs::path(o.out) / "report.json", summary);
  std::cout << "validation reports written to " << o.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Granular house-price densities and indices"};
  app.require_subcommand(1);
  app.allow_extras(false);
  Options o;
  SyntheticConfig synth = synthetic_scenario("standard");
  std::string scenario = "standard";
  std::optional<double> sales_per_key_week;
  std::optional<int> n_weeks, n_regions, n_metros;

  auto add_common = [&](CLI::App* c, bool data) {
    if (data) {
      c->add_option("--data", o.data, "Sales CSV")->envname(env_name("data"));
      c->add_option("--registry", o.registry, "Region registry JSON")->envname(env_name("registry"));
    }
    c->add_option("--out", o.out, "Output directory")->envname(env_name("out"));
    c->add_option("--seed", o.seed, "Random seed")->envname(env_name("seed"));
  };
  auto add_training = [&](CLI::App* c) {
    c->add_option("--ensemble", o.ensemble, "Ensemble size")->envname(env_name("ensemble"))->check(CLI::PositiveNumber);
    c->add_option("--components", o.components, "Mixture components")->envname(env_name("components"))->check(CLI::PositiveNumber);
    c->add_option("--jitter-weeks", o.jitter_weeks, "Week jitter sd")->envname(env_name("jitter-weeks"))->check(CLI::NonNegativeNumber);
    c->add_option("--epochs", o.epochs, "Training epochs")->envname(env_name("epochs"))->check(CLI::PositiveNumber);
    c->add_option("--hidden", o.hidden, "Hidden layer width")->envname(env_name("hidden"))->check(CLI::PositiveNumber);
    c->add_option("--batch", o.batch, "Minibatch size")->envname(env_name("batch"))->check(CLI::PositiveNumber);
    c->add_option("--learning-rate", o.learning_rate, "Adam learning rate")->envname(env_name("learning-rate"))->check(CLI::PositiveNumber);
    c->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->envname(env_name("threads"))->check(CLI::NonNegativeNumber);
  };

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic market");
  add_common(synth_cmd, false);
  synth_cmd->add_option("--scenario", scenario, "Scenario name")
      ->envname(env_name("scenario"))
      ->check(CLI::IsMember(synthetic_scenario_names()));
  synth_cmd->add_option("--sales-per-key-week", sales_per_key_week, "Mean sales per key and week");
  synth_cmd->add_option("--weeks", n_weeks, "Number of weeks");
  synth_cmd->add_option("--regions", n_regions, "Number of regions");
  synth_cmd->add_option("--metros", n_metros, "Number of metros");

  auto* train_cmd = app.add_subcommand("train", "Train a density ensemble");
  add_common(train_cmd, true);
  add_training(train_cmd);

  auto* index_cmd = app.add_subcommand("index", "Emit indices and density dumps");
  add_common(index_cmd, true);
  index_cmd->add_option("--model", o.model, "Model JSON from train")->envname(env_name("model"));
  index_cmd->add_option("--weights-cutoff", o.weights_cutoff, "Last week or date of the weight period")->envname(env_name("weights-cutoff"));
  index_cmd->add_option("--percentiles", o.percentiles, "Quantile series, e.g. 20,80")->envname(env_name("percentiles"));
  index_cmd->add_option("--base-date", o.base_date, "Normalize D-indices to 1 at this week or date")->envname(env_name("base-date"));
  index_cmd->add_option("--grid-points", o.grid_points, "Density dump grid size")->envname(env_name("grid-points"))->check(CLI::Range(2, 100000));

  auto* validate_cmd = app.add_subcommand("validate", "Run the validation protocol");
  add_common(validate_cmd, true);
  add_training(validate_cmd);
  validate_cmd->add_option("--folds", o.folds, "Projection folds")->envname(env_name("folds"))->check(CLI::Range(2, 1000));
  validate_cmd->add_option("--weights-cutoff", o.weights_cutoff, "Last week or date of the weight period")->envname(env_name("weights-cutoff"));
  validate_cmd->add_option("--percentiles", o.percentiles, "Calibration grid")->envname(env_name("percentiles"));
  validate_cmd->add_option("--checks", o.checks, "Comma list of kfold,calibration,persistence,ranks,sparsity,nll")->envname(env_name("checks"));
  validate_cmd->add_option("--sparsity-region", o.sparsity_region, "Region thinned in the sparsity ablation")->envname(env_name("sparsity-region"));
  validate_cmd->add_option("--keep-fraction", o.keep_fraction, "Retained share of the thinned region")->envname(env_name("keep-fraction"));
  validate_cmd->add_option("--sparsity-ensemble", o.sparsity_ensemble, "Ensemble size in the sparsity ablation")->envname(env_name("sparsity-ensemble"))->check(CLI::PositiveNumber);
  validate_cmd->add_option("--window-start", o.window_start, "First week or date of scored pairs")->envname(env_name("window-start"));
  validate_cmd->add_option("--window-end", o.window_end, "Last week or date of scored pairs")->envname(env_name("window-end"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) {
      synth = synthetic_scenario(scenario);
      if (sales_per_key_week) synth.sales_per_key_week = *sales_per_key_week;
      if (n_weeks) synth.n_weeks = *n_weeks;
      if (n_regions) synth.n_regions = *n_regions;
      if (n_metros) synth.n_metros = *n_metros;
      try {
        validate(synth);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      return cmd_synth(o, synth);
    }
    if (*train_cmd) return cmd_train(o);
    if (*index_cmd) return cmd_index(o);
    if (*validate_cmd) return cmd_validate(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
