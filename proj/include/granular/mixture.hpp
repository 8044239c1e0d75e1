#pragma once

// Gaussian mixtures over log price: evaluation, inversion, moments and pooling.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace granular {

struct Component {
  double weight = 0.0;
  double mean = 0.0;
  double variance = 1.0;
};

/// A finite mixture of univariate Gaussians.
///
/// Construction validates the invariants: at least one component, weights
/// non-negative and summing to one within 1e-10, and every variance at or
/// above the floor.
class GaussianMixture {
 public:
  static constexpr double kVarianceFloor = 1e-6;
  static constexpr double kWeightTolerance = 1e-10;

  explicit GaussianMixture(std::vector<Component> components) : components_(std::move(components)) {
    if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!std::isfinite(c.weight) || !std::isfinite(c.mean) || !std::isfinite(c.variance))
        throw std::invalid_argument("mixture component has non-finite parameters");
      if (c.weight < 0.0) throw std::invalid_argument("mixture weight is negative");
      // Tiny slack so that floor + rounding still validates.
      if (c.variance < kVarianceFloor * (1.0 - 1e-12))
        throw std::invalid_argument("mixture variance below floor");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > kWeightTolerance)
      throw std::invalid_argument("mixture weights sum to " + std::to_string(total));
  }

  /// Single Gaussian N(mean, variance).
  static GaussianMixture normal(double mean, double variance) { return GaussianMixture({{1.0, mean, variance}}); }

  std::span<const Component> components() const { return components_; }
  std::size_t size() const { return components_.size(); }

  double min_mean() const {
    return std::min_element(components_.begin(), components_.end(),
                            [](const auto& a, const auto& b) { return a.mean < b.mean; })
        ->mean;
  }
  double max_mean() const {
    return std::max_element(components_.begin(), components_.end(),
                            [](const auto& a, const auto& b) { return a.mean < b.mean; })
        ->mean;
  }
  double max_sd() const {
    double v = 0.0;
    for (const auto& c : components_) v = std::max(v, c.variance);
    return std::sqrt(v);
  }

 private:
  std::vector<Component> components_;
};

inline double normal_pdf(double y, double mean, double variance) {
  const double d = y - mean;
  return std::exp(-0.5 * d * d / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double pdf(const GaussianMixture& m, double y) {
  double sum = 0.0;
  for (const auto& c : m.components()) sum += c.weight * normal_pdf(y, c.mean, c.variance);
  return sum;
}

inline double cdf(const GaussianMixture& m, double y) {
  double sum = 0.0;
  for (const auto& c : m.components()) sum += c.weight * normal_cdf((y - c.mean) / std::sqrt(c.variance));
  return std::clamp(sum, 0.0, 1.0);
}

/// Inverse CDF by safeguarded Newton iteration inside a bisection bracket.
///
/// The initial bracket is [min mean - 10 max sd, max mean + 10 max sd],
/// widened if p lies in the far tails.
inline double quantile(const GaussianMixture& m, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("quantile probability must lie in (0, 1)");
  const double sd = m.max_sd();
  double lo = m.min_mean() - 10.0 * sd;
  double hi = m.max_mean() + 10.0 * sd;
  while (cdf(m, lo) > p) lo -= 10.0 * sd;
  while (cdf(m, hi) < p) hi += 10.0 * sd;

  double y = 0.5 * (lo + hi);
  for (int iter = 0; iter < 400; ++iter) {
    const double f = cdf(m, y) - p;
    if (f == 0.0) return y;
    if (f < 0.0)
      lo = y;
    else
      hi = y;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(y))) break;
    const double dens = pdf(m, y);
    double next = dens > 0.0 ? y - f / dens : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - y) <= 1e-15 * std::max(1.0, std::abs(y))) return next;
    y = next;
  }
  return y;
}

struct MixtureMoments {
  double mean_log = 0.0;
  double median_log = 0.0;
  double gmean_price = 0.0;
  double mean_price = 0.0;
};

inline double mean_log(const GaussianMixture& m) {
  double s = 0.0;
  for (const auto& c : m.components()) s += c.weight * c.mean;
  return s;
}

inline MixtureMoments moments(const GaussianMixture& m) {
  MixtureMoments out;
  out.mean_log = mean_log(m);
  out.median_log = quantile(m, 0.5);
  out.gmean_price = std::exp(out.mean_log);
  for (const auto& c : m.components()) out.mean_price += c.weight * std::exp(c.mean + 0.5 * c.variance);
  return out;
}

/// Weighted pool of mixtures: the density sum_i w_i f_i / sum_i w_i, kept
/// as one mixture holding every input component.
inline GaussianMixture pool(std::span<const GaussianMixture> mixtures, std::span<const double> weights) {
  if (mixtures.size() != weights.size()) throw std::invalid_argument("pool: mixtures and weights differ in length");
  if (mixtures.empty()) throw std::invalid_argument("pool: nothing to pool");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("pool: weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("pool: weights sum to zero");

  std::size_t count = 0;
  for (const auto& m : mixtures) count += m.size();
  std::vector<Component> out;
  out.reserve(count);
  double sum = 0.0;
  for (std::size_t i = 0; i < mixtures.size(); ++i) {
    const double scale = weights[i] / total;
    for (const auto& c : mixtures[i].components()) {
      out.push_back({c.weight * scale, c.mean, c.variance});
      sum += c.weight * scale;
    }
  }
  // Rounding can leave the sum a few ulps from one for long lists.
  for (auto& c : out) c.weight /= sum;
  return GaussianMixture(std::move(out));
}

inline GaussianMixture pool(std::span<const GaussianMixture> mixtures) {
  std::vector<double> w(mixtures.size(), 1.0);
  return pool(mixtures, w);
}

inline nlohmann::json to_json(const GaussianMixture& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : m.components()) comps.push_back({{"w", c.weight}, {"mu", c.mean}, {"var", c.variance}});
  return {{"components", comps}};
}

inline GaussianMixture mixture_from_json(const nlohmann::json& j) {
  std::vector<Component> comps;
  for (const auto& c : j.at("components")) comps.push_back({c.at("w").get<double>(), c.at("mu").get<double>(), c.at("var").get<double>()});
  return GaussianMixture(std::move(comps));
}

}  // namespace granular
