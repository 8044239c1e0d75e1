#pragma once

// Linear benchmark indices: time-dummy hedonic regression and repeat-sales
// regression, both solved as ridge least squares over a sparse design.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "granular/data.hpp"
#include "granular/error.hpp"
#include "granular/index_series.hpp"

namespace granular {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

struct RidgeOptions {
  /// lambda = lambda_scale * mean diagonal of X'X unless `lambda` is set.
  double lambda_scale = 1e-6;
  std::optional<double> lambda;
  double tolerance = 1e-10;
};

struct RidgeSolution {
  Eigen::VectorXd theta;
  double lambda = 0.0;
  Eigen::Index iterations = 0;
  double error = 0.0;
};

/// Minimizes |y - X theta|^2 + lambda |theta|^2 by Jacobi-preconditioned
/// conjugate gradient on the normal equations.
inline RidgeSolution solve_ridge(const SparseMatrix& x, const Eigen::VectorXd& y, const RidgeOptions& opt = {}) {
  if (x.rows() != y.size()) throw std::invalid_argument("ridge: design and response differ in length");
  SparseMatrix normal = SparseMatrix(x.transpose()) * x;
  double lambda = 0.0;
  if (opt.lambda) {
    lambda = *opt.lambda;
  } else {
    double diag = 0.0;
    for (Eigen::Index j = 0; j < normal.cols(); ++j) diag += normal.coeff(j, j);
    lambda = opt.lambda_scale * diag / static_cast<double>(std::max<Eigen::Index>(1, normal.cols()));
  }
  if (!(lambda > 0.0)) throw std::invalid_argument("ridge: lambda must be positive");
  for (Eigen::Index j = 0; j < normal.cols(); ++j) normal.coeffRef(j, j) += lambda;
  const Eigen::VectorXd rhs = x.transpose() * y;

  Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
  cg.setTolerance(opt.tolerance);
  cg.setMaxIterations(std::max<Eigen::Index>(1000, 20 * normal.cols()));
  cg.compute(normal);
  RidgeSolution out;
  out.theta = cg.solve(rhs);
  out.lambda = lambda;
  out.iterations = cg.iterations();
  out.error = cg.error();
  if (cg.info() != Eigen::Success || !out.theta.allFinite())
    throw NumericalError("ridge conjugate gradient did not converge (error " + std::to_string(cg.error()) + ")");
  return out;
}

// ---------------------------------------------------------------------------
// Hedonic

inline std::vector<std::string> default_hedonic_covariates() { return {"bedrooms", "bathrooms", "parking", "log_land_area"}; }

/// Fitted time-dummy hedonic model. Columns are laid out as intercept,
/// covariates, missing-covariate indicators, a unit dummy, region dummies and
/// week dummies.
struct HedonicModel {
  std::vector<std::string> column_names;
  Eigen::VectorXd beta;        // every non-time coefficient, intercept first
  std::vector<int> weeks;      // one time dummy per week with sales
  std::vector<double> delta;   // time-dummy coefficients
  double lambda = 0.0;
  double c = 0.0;              // mean of fitted non-time part over the training set
  std::string scope;
};

/// Fits log price on covariates, region dummies and one dummy per week with
/// sales. Every dummy stays in the design; the ridge penalty picks the
/// minimum-norm split between intercept and dummies, and only differences of
/// delta carry meaning.
inline HedonicModel fit_hedonic(const Dataset& data, const std::vector<std::string>& covariates = default_hedonic_covariates(),
                                const RidgeOptions& opt = {}, std::string scope = {}) {
  if (data.empty()) throw DataError("hedonic: empty dataset");
  std::set<int> week_set;
  std::set<std::string> region_set;
  bool any_unit = false, any_house = false;
  std::vector<bool> cov_missing(covariates.size(), false);
  for (const auto& r : data) {
    week_set.insert(r.week);
    region_set.insert(r.region);
    any_unit |= r.prop_type == PropType::unit;
    any_house |= r.prop_type == PropType::house;
    for (std::size_t c = 0; c < covariates.size(); ++c)
      if (!r.extra_hedonic.count(covariates[c])) cov_missing[c] = true;
  }
  HedonicModel m;
  m.scope = std::move(scope);
  m.column_names.push_back("intercept");
  for (const auto& c : covariates) m.column_names.push_back(c);
  std::vector<int> missing_col(covariates.size(), -1);
  for (std::size_t c = 0; c < covariates.size(); ++c)
    if (cov_missing[c]) {
      missing_col[c] = static_cast<int>(m.column_names.size());
      m.column_names.push_back(covariates[c] + "_missing");
    }
  int unit_col = -1;
  if (any_unit && any_house) {
    unit_col = static_cast<int>(m.column_names.size());
    m.column_names.push_back("unit");
  }
  std::map<std::string, int> region_col;
  for (const auto& reg : region_set) {
    region_col[reg] = static_cast<int>(m.column_names.size());
    m.column_names.push_back("region:" + reg);
  }
  const int n_fixed = static_cast<int>(m.column_names.size());
  m.weeks.assign(week_set.begin(), week_set.end());
  std::map<int, int> week_col;
  for (std::size_t i = 0; i < m.weeks.size(); ++i) week_col[m.weeks[i]] = n_fixed + static_cast<int>(i);
  const int n_cols = n_fixed + static_cast<int>(m.weeks.size());

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(data.size() * (4 + covariates.size()));
  Eigen::VectorXd y(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data[i];
    const int row = static_cast<int>(i);
    y(row) = r.log_price;
    trips.emplace_back(row, 0, 1.0);
    for (std::size_t c = 0; c < covariates.size(); ++c) {
      auto it = r.extra_hedonic.find(covariates[c]);
      if (it != r.extra_hedonic.end())
        trips.emplace_back(row, static_cast<int>(1 + c), it->second);
      else
        trips.emplace_back(row, missing_col[c], 1.0);
    }
    if (unit_col >= 0 && r.prop_type == PropType::unit) trips.emplace_back(row, unit_col, 1.0);
    trips.emplace_back(row, region_col.at(r.region), 1.0);
    trips.emplace_back(row, week_col.at(r.week), 1.0);
  }
  SparseMatrix x(static_cast<Eigen::Index>(data.size()), n_cols);
  x.setFromTriplets(trips.begin(), trips.end());
  const auto sol = solve_ridge(x, y, opt);
  m.lambda = sol.lambda;
  m.beta = sol.theta.head(n_fixed);
  m.delta.assign(sol.theta.data() + n_fixed, sol.theta.data() + n_cols);

  // C: mean fitted value of the non-time part.
  const Eigen::VectorXd fitted = x.leftCols(n_fixed) * m.beta;
  m.c = fitted.mean();
  return m;
}

/// H(t) = exp(delta_t + C) at every week with a time dummy.
inline IndexSeries hedonic_index(const HedonicModel& m) {
  IndexSeries s;
  s.kind = IndexKind::hedonic;
  s.scope = m.scope;
  s.weeks = m.weeks;
  for (double d : m.delta) s.values.push_back(std::exp(d + m.c));
  return s;
}

// ---------------------------------------------------------------------------
// Repeat sales

struct RepeatSalesFit {
  IndexSeries index;
  /// Weeks inside the fitted span with no incident pair; the index has no
  /// value there.
  std::vector<int> unsupported_weeks;
  double lambda = 0.0;
};

/// Regresses y2 - y1 on a design with +1 in the second sale's week and -1
/// in the first sale's week; H(t) = exp(delta_t - delta_base) with the
/// earliest week as base.
inline RepeatSalesFit fit_repeat_sales(const std::vector<RepeatSalePair>& pairs, const RidgeOptions& opt = {},
                                       std::string scope = {}) {
  if (pairs.empty()) throw DataError("repeat sales: no pairs");
  std::set<int> week_set;
  for (const auto& p : pairs) {
    if (p.t2 <= p.t1) throw std::invalid_argument("repeat sales: pair with t2 <= t1");
    week_set.insert(p.t1);
    week_set.insert(p.t2);
  }
  const std::vector<int> weeks(week_set.begin(), week_set.end());
  std::map<int, int> col;
  for (std::size_t i = 0; i < weeks.size(); ++i) col[weeks[i]] = static_cast<int>(i);

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(2 * pairs.size());
  Eigen::VectorXd y(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const int row = static_cast<int>(i);
    trips.emplace_back(row, col.at(pairs[i].t2), 1.0);
    trips.emplace_back(row, col.at(pairs[i].t1), -1.0);
    y(row) = pairs[i].y2 - pairs[i].y1;
  }
  SparseMatrix x(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(weeks.size()));
  x.setFromTriplets(trips.begin(), trips.end());
  const auto sol = solve_ridge(x, y, opt);

  RepeatSalesFit fit;
  fit.lambda = sol.lambda;
  fit.index.kind = IndexKind::repeat_sales;
  fit.index.scope = std::move(scope);
  fit.index.weeks = weeks;
  const double base = sol.theta(0);
  for (Eigen::Index i = 0; i < sol.theta.size(); ++i) fit.index.values.push_back(std::exp(sol.theta(i) - base));
  for (int w = weeks.front(); w <= weeks.back(); ++w)
    if (!week_set.count(w)) fit.unsupported_weeks.push_back(w);
  return fit;
}

}  // namespace granular
