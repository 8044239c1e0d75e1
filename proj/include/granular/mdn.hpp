#pragma once

// Mixture-density network mapping (feature key, week) to a Gaussian mixture
// over log price, its negative log-likelihood loss with exact gradients,
// Adam training with week jitter, and seeded ensembles.
//
// Input row: [week | week-of-year | region | mean of neighbor regions | prop
// type | bedrooms? | land band?], each a learned embedding of width
// `embedding_dim`. Three tanh hidden layers feed a linear head producing K
// weight logits, K means and K raw variances. Weights are a softmax of the
// logits; variances are softplus(raw) plus the mixture variance floor. Means
// and variances are expressed in standardized log-price units, scaled back
// with the training set's center and scale.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "granular/data.hpp"
#include "granular/error.hpp"
#include "granular/mixture.hpp"
#include "granular/parallel.hpp"

namespace granular {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  int components = 8;
  int epochs = 30;
  int batch_size = 256;
  double learning_rate = 3e-3;
  LrSchedule schedule = LrSchedule::cosine;
  /// Cosine decay ends at learning_rate * final_lr_fraction.
  double final_lr_fraction = 0.05;
  double weight_decay = 1e-5;
  double jitter_sd_weeks = 2.0;
  int hidden_width = 64;
  int embedding_dim = 10;
  std::uint64_t seed = 1;
  KeyResolution resolution{};
  /// Worker threads for ensemble training; 0 means hardware concurrency.
  int threads = 0;

  void validate() const {
    if (components < 1 || epochs < 1 || batch_size < 1 || !(learning_rate > 0.0) || hidden_width < 1 ||
        embedding_dim < 1 || !(final_lr_fraction > 0.0) || weight_decay < 0.0)
      throw std::invalid_argument("train config: sizes and rates must be positive");
    if (!(jitter_sd_weeks >= 0.0)) throw std::invalid_argument("train config: jitter sd must be non-negative");
  }
};

/// Shapes of the network; fixed at construction.
struct Architecture {
  int embedding_dim = 10;
  int hidden = 64;
  int components = 8;
  int n_weeks = 1;
  int n_regions = 1;
  int n_bedroom_cats = 0;  // 0 = input not used
  int n_land_cats = 0;

  int categorical_inputs() const { return 5 + (n_bedroom_cats > 0) + (n_land_cats > 0); }
  int input_dim() const { return embedding_dim * categorical_inputs(); }
  int output_dim() const { return 3 * components; }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Maps feature keys and weeks onto embedding rows.
struct InputEncoding {
  std::vector<std::string> region_ids;
  std::vector<std::vector<int>> neighbors;
  KeyResolution resolution{};
  int week_min = 0;
  int week_max = 0;
  int bedroom_max = 0;
  int land_max = 0;

  int region_row(const std::string& id) const {
    auto it = std::find(region_ids.begin(), region_ids.end(), id);
    if (it == region_ids.end()) throw DataError("unknown region '" + id + "'");
    return static_cast<int>(it - region_ids.begin());
  }
  /// Weeks outside the trained span clamp to its ends.
  int week_row(int week) const { return std::clamp(week, week_min, week_max) - week_min; }
  int bedroom_row(const std::optional<int>& b) const { return b ? std::clamp(*b, 0, bedroom_max) + 1 : 0; }
  int land_row(const std::optional<int>& l) const { return l ? std::clamp(*l, 0, land_max) + 1 : 0; }

  static InputEncoding build(const Dataset& data, const RegionRegistry& registry, KeyResolution res) {
    if (data.empty()) throw DataError("cannot encode an empty dataset");
    InputEncoding e;
    e.resolution = res;
    for (const auto& r : registry.regions()) e.region_ids.push_back(r.id);
    for (const auto& r : registry.regions()) {
      std::vector<int> nb;
      for (const auto& n : r.neighbors) nb.push_back(registry.index_of(n));
      e.neighbors.push_back(std::move(nb));
    }
    e.week_min = e.week_max = data.front().week;
    for (const auto& r : data) {
      e.week_min = std::min(e.week_min, r.week);
      e.week_max = std::max(e.week_max, r.week);
      if (r.bedrooms) e.bedroom_max = std::max(e.bedroom_max, *r.bedrooms);
      if (r.land_band) e.land_max = std::max(e.land_max, *r.land_band);
    }
    return e;
  }

  nlohmann::json to_json() const {
    return {{"region_ids", region_ids}, {"neighbors", neighbors},   {"bedrooms", resolution.bedrooms},
            {"land_band", resolution.land_band}, {"week_min", week_min}, {"week_max", week_max},
            {"bedroom_max", bedroom_max},        {"land_max", land_max}};
  }
  static InputEncoding from_json(const nlohmann::json& j) {
    InputEncoding e;
    e.region_ids = j.at("region_ids").get<std::vector<std::string>>();
    e.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
    e.resolution.bedrooms = j.at("bedrooms").get<bool>();
    e.resolution.land_band = j.at("land_band").get<bool>();
    e.week_min = j.at("week_min").get<int>();
    e.week_max = j.at("week_max").get<int>();
    e.bedroom_max = j.at("bedroom_max").get<int>();
    e.land_max = j.at("land_max").get<int>();
    return e;
  }
};

inline Architecture make_architecture(const InputEncoding& enc, const TrainConfig& cfg) {
  Architecture a;
  a.embedding_dim = cfg.embedding_dim;
  a.hidden = cfg.hidden_width;
  a.components = cfg.components;
  a.n_weeks = enc.week_max - enc.week_min + 1;
  a.n_regions = static_cast<int>(enc.region_ids.size());
  a.n_bedroom_cats = enc.resolution.bedrooms ? enc.bedroom_max + 2 : 0;
  a.n_land_cats = enc.resolution.land_band ? enc.land_max + 2 : 0;
  return a;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Parameter storage aligned like Eigen's own buffers, so vectorized kernels
/// take the same path whatever the heap address.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// All trainable values in one flat vector, viewed as named blocks.
class NetworkParams {
 public:
  enum Block : int { week_emb, woy_emb, region_emb, prop_emb, bed_emb, land_emb, w1, b1, w2, b2, w3, b3, wo, bo, block_count };

  NetworkParams() = default;
  explicit NetworkParams(const Architecture& arch) : arch_(arch) {
    const int e = arch.embedding_dim, h = arch.hidden;
    shapes_ = {{{arch.n_weeks, e},
                {kWeeksPerYear, e},
                {arch.n_regions, e},
                {kPropTypeCount, e},
                {arch.n_bedroom_cats, e},
                {arch.n_land_cats, e},
                {arch.input_dim(), h},
                {1, h},
                {h, h},
                {1, h},
                {h, h},
                {1, h},
                {h, arch.output_dim()},
                {1, arch.output_dim()}}};
    std::size_t off = 0;
    for (int b = 0; b < block_count; ++b) {
      offsets_[b] = off;
      off += static_cast<std::size_t>(shapes_[b].first) * static_cast<std::size_t>(shapes_[b].second);
    }
    values_.assign(off, 0.0);
  }

  const Architecture& architecture() const { return arch_; }
  ParamVector& values() { return values_; }
  const ParamVector& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  Eigen::Map<RowMatrix> block(Block b) {
    return {values_.data() + offsets_[b], shapes_[b].first, shapes_[b].second};
  }
  Eigen::Map<const RowMatrix> block(Block b) const {
    return {values_.data() + offsets_[b], shapes_[b].first, shapes_[b].second};
  }
  std::pair<int, int> shape(Block b) const { return shapes_[b]; }
  std::size_t offset(Block b) const { return offsets_[b]; }

  /// Same shapes, all zeros.
  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    std::fill(z.values_.begin(), z.values_.end(), 0.0);
    return z;
  }

  double y_center = 0.0;
  double y_scale = 1.0;

 private:
  Architecture arch_;
  std::array<std::pair<int, int>, block_count> shapes_{};
  std::array<std::size_t, block_count> offsets_{};
  ParamVector values_;
};

struct EncodedRecord {
  int week = 0;  // embedding row
  int woy = 0;
  int region = 0;
  int prop = 0;
  int bedroom = 0;
  int land = 0;
  double y = 0.0;
};

inline EncodedRecord encode(const InputEncoding& enc, const FeatureKey& key, int week, int woy, double y = 0.0) {
  EncodedRecord r;
  r.week = enc.week_row(week);
  r.woy = ((woy % kWeeksPerYear) + kWeeksPerYear) % kWeeksPerYear;
  r.region = enc.region_row(key.region);
  r.prop = static_cast<int>(key.prop_type);
  r.bedroom = enc.resolution.bedrooms ? enc.bedroom_row(key.bedrooms) : 0;
  r.land = enc.resolution.land_band ? enc.land_row(key.land_band) : 0;
  r.y = y;
  return r;
}

inline EncodedRecord encode(const InputEncoding& enc, const SaleRecord& s) {
  return encode(enc, key_of(s, enc.resolution), s.week, s.week_of_year, s.log_price);
}

namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// Scratch buffers for one batch.
struct Workspace {
  RowMatrix x, a1, a2, a3, out, d_out, d_a, d_x, neighbor_mean, d_neighbor;
};

inline void neighbor_means(const NetworkParams& p, const InputEncoding& enc, RowMatrix& out) {
  const auto regions = p.block(NetworkParams::region_emb);
  out.setZero(regions.rows(), regions.cols());
  for (Eigen::Index r = 0; r < regions.rows(); ++r) {
    const auto& nb = enc.neighbors[static_cast<std::size_t>(r)];
    if (nb.empty()) continue;
    for (int n : nb) out.row(r) += regions.row(n);
    out.row(r) /= static_cast<double>(nb.size());
  }
}

inline void gather_inputs(const NetworkParams& p, std::span<const EncodedRecord> batch, Workspace& ws) {
  const auto& a = p.architecture();
  const int e = a.embedding_dim;
  ws.x.resize(static_cast<Eigen::Index>(batch.size()), a.input_dim());
  const auto week = p.block(NetworkParams::week_emb);
  const auto woy = p.block(NetworkParams::woy_emb);
  const auto region = p.block(NetworkParams::region_emb);
  const auto prop = p.block(NetworkParams::prop_emb);
  const auto bed = p.block(NetworkParams::bed_emb);
  const auto land = p.block(NetworkParams::land_emb);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch[i];
    auto row = ws.x.row(static_cast<Eigen::Index>(i));
    int col = 0;
    row.segment(col, e) = week.row(r.week);
    col += e;
    row.segment(col, e) = woy.row(r.woy);
    col += e;
    row.segment(col, e) = region.row(r.region);
    col += e;
    row.segment(col, e) = ws.neighbor_mean.row(r.region);
    col += e;
    row.segment(col, e) = prop.row(r.prop);
    col += e;
    if (a.n_bedroom_cats > 0) {
      row.segment(col, e) = bed.row(r.bedroom);
      col += e;
    }
    if (a.n_land_cats > 0) row.segment(col, e) = land.row(r.land);
  }
}

inline void forward_hidden(const NetworkParams& p, Workspace& ws) {
  using B = NetworkParams;
  ws.a1.noalias() = ws.x * p.block(B::w1);
  ws.a1.rowwise() += p.block(B::b1).row(0);
  ws.a1 = ws.a1.array().tanh();
  ws.a2.noalias() = ws.a1 * p.block(B::w2);
  ws.a2.rowwise() += p.block(B::b2).row(0);
  ws.a2 = ws.a2.array().tanh();
  ws.a3.noalias() = ws.a2 * p.block(B::w3);
  ws.a3.rowwise() += p.block(B::b3).row(0);
  ws.a3 = ws.a3.array().tanh();
  ws.out.noalias() = ws.a3 * p.block(B::wo);
  ws.out.rowwise() += p.block(B::bo).row(0);
}

/// Mixture for one row of head output.
inline GaussianMixture head_to_mixture(const NetworkParams& p, const double* row) {
  const int k = p.architecture().components;
  std::vector<Component> comps(static_cast<std::size_t>(k));
  double mx = row[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
  double z = 0.0;
  for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
  const double s2 = p.y_scale * p.y_scale;
  for (int j = 0; j < k; ++j) {
    auto& c = comps[static_cast<std::size_t>(j)];
    c.weight = std::exp(row[j] - mx) / z;
    c.mean = p.y_center + p.y_scale * row[k + j];
    c.variance = s2 * softplus(row[2 * k + j]) + GaussianMixture::kVarianceFloor;
  }
  return GaussianMixture(std::move(comps));
}

/// Mean NLL of a batch; when `grad` is given, adds d(mean NLL)/d(params) into it.
inline double batch_nll(const NetworkParams& p, const InputEncoding& enc, std::span<const EncodedRecord> batch,
                        NetworkParams* grad, Workspace& ws, std::vector<double>* per_record = nullptr) {
  using B = NetworkParams;
  const auto& a = p.architecture();
  const int k = a.components;
  const auto n = static_cast<Eigen::Index>(batch.size());
  neighbor_means(p, enc, ws.neighbor_mean);
  gather_inputs(p, batch, ws);
  forward_hidden(p, ws);

  if (grad) ws.d_out.resize(n, a.output_dim());
  const double s = p.y_scale, s2 = s * s;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> logit(static_cast<std::size_t>(k)), comp(static_cast<std::size_t>(k));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* o = ws.out.row(i).data();
    const double y = batch[static_cast<std::size_t>(i)].y;
    double lmax = o[0];
    for (int j = 1; j < k; ++j) lmax = std::max(lmax, o[j]);
    double lz = 0.0;
    for (int j = 0; j < k; ++j) lz += std::exp(o[j] - lmax);
    lz = lmax + std::log(lz);
    double cmax = -INFINITY;
    for (int j = 0; j < k; ++j) {
      const double mu = p.y_center + s * o[k + j];
      const double var = s2 * softplus(o[2 * k + j]) + GaussianMixture::kVarianceFloor;
      const double d = y - mu;
      logit[static_cast<std::size_t>(j)] = o[j] - lz;
      comp[static_cast<std::size_t>(j)] = logit[static_cast<std::size_t>(j)] - kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * d * d / var;
      cmax = std::max(cmax, comp[static_cast<std::size_t>(j)]);
    }
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(comp[static_cast<std::size_t>(j)] - cmax);
    const double loglik = cmax + std::log(sum);
    total -= loglik;
    if (per_record) per_record->push_back(-loglik);
    if (!grad) continue;
    double* g = ws.d_out.row(i).data();
    for (int j = 0; j < k; ++j) {
      const auto js = static_cast<std::size_t>(j);
      const double gamma = std::exp(comp[js] - loglik);
      const double alpha = std::exp(logit[js]);
      const double mu = p.y_center + s * o[k + j];
      const double sp = softplus(o[2 * k + j]);
      const double var = s2 * sp + GaussianMixture::kVarianceFloor;
      const double d = y - mu;
      g[j] = (alpha - gamma) * inv_n;
      g[k + j] = -gamma * d / var * s * inv_n;
      g[2 * k + j] = gamma * (var - d * d) / (2.0 * var * var) * s2 * sigmoid(o[2 * k + j]) * inv_n;
    }
  }
  if (!grad) return total * inv_n;

  // Backpropagate through the head and hidden layers.
  grad->block(B::wo).noalias() += ws.a3.transpose() * ws.d_out;
  grad->block(B::bo).row(0) += ws.d_out.colwise().sum();
  ws.d_a.noalias() = ws.d_out * p.block(B::wo).transpose();
  ws.d_a.array() *= 1.0 - ws.a3.array().square();
  grad->block(B::w3).noalias() += ws.a2.transpose() * ws.d_a;
  grad->block(B::b3).row(0) += ws.d_a.colwise().sum();
  RowMatrix d_prev = ws.d_a * p.block(B::w3).transpose();
  d_prev.array() *= 1.0 - ws.a2.array().square();
  grad->block(B::w2).noalias() += ws.a1.transpose() * d_prev;
  grad->block(B::b2).row(0) += d_prev.colwise().sum();
  ws.d_a.noalias() = d_prev * p.block(B::w2).transpose();
  ws.d_a.array() *= 1.0 - ws.a1.array().square();
  grad->block(B::w1).noalias() += ws.x.transpose() * ws.d_a;
  grad->block(B::b1).row(0) += ws.d_a.colwise().sum();
  ws.d_x.noalias() = ws.d_a * p.block(B::w1).transpose();

  // Scatter input gradients into the embedding tables.
  const int e = a.embedding_dim;
  auto g_week = grad->block(B::week_emb);
  auto g_woy = grad->block(B::woy_emb);
  auto g_region = grad->block(B::region_emb);
  auto g_prop = grad->block(B::prop_emb);
  auto g_bed = grad->block(B::bed_emb);
  auto g_land = grad->block(B::land_emb);
  ws.d_neighbor.setZero(a.n_regions, e);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = batch[static_cast<std::size_t>(i)];
    const auto row = ws.d_x.row(i);
    int col = 0;
    g_week.row(r.week) += row.segment(col, e);
    col += e;
    g_woy.row(r.woy) += row.segment(col, e);
    col += e;
    g_region.row(r.region) += row.segment(col, e);
    col += e;
    ws.d_neighbor.row(r.region) += row.segment(col, e);
    col += e;
    g_prop.row(r.prop) += row.segment(col, e);
    col += e;
    if (a.n_bedroom_cats > 0) {
      g_bed.row(r.bedroom) += row.segment(col, e);
      col += e;
    }
    if (a.n_land_cats > 0) g_land.row(r.land) += row.segment(col, e);
  }
  for (int r = 0; r < a.n_regions; ++r) {
    const auto& nb = enc.neighbors[static_cast<std::size_t>(r)];
    if (nb.empty()) continue;
    const double share = 1.0 / static_cast<double>(nb.size());
    for (int m : nb) g_region.row(m) += share * ws.d_neighbor.row(r);
  }
  return total * inv_n;
}

}  // namespace detail

/// Random initial parameters: uniform embeddings in [-0.05, 0.05], Glorot
/// hidden layers, a small output layer and head biases that spread the
/// component means over the standardized range.
inline NetworkParams init_params(const Architecture& arch, std::mt19937_64& rng, double y_center, double y_scale) {
  using B = NetworkParams;
  NetworkParams p(arch);
  p.y_center = y_center;
  p.y_scale = y_scale;
  std::uniform_real_distribution<double> emb(-0.05, 0.05);
  for (auto b : {B::week_emb, B::woy_emb, B::region_emb, B::prop_emb, B::bed_emb, B::land_emb}) {
    auto m = p.block(b);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = emb(rng);
  }
  auto glorot = [&](B::Block b, double gain) {
    auto m = p.block(b);
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  // Embeddings are small, so the first layer gets extra gain.
  glorot(B::w1, 4.0);
  glorot(B::w2, 1.0);
  glorot(B::w3, 1.0);
  glorot(B::wo, 0.1);
  const int k = arch.components;
  auto bo = p.block(B::bo);
  const boost::math::normal_distribution<double> std_normal;
  for (int j = 0; j < k; ++j) {
    bo(0, k + j) = 0.8 * boost::math::quantile(std_normal, (j + 0.5) / k);
    bo(0, 2 * k + j) = std::log(std::expm1(0.3));
  }
  return p;
}

struct TrainingMeta {
  std::uint64_t seed = 0;
  double final_train_nll = 0.0;
  std::vector<double> epoch_loss;
};

/// One trained network with the encoding it was trained under.
struct DensityModel {
  InputEncoding encoding;
  NetworkParams params;
  TrainConfig config;
  TrainingMeta meta;
};

/// Mixture for one key and week.
inline GaussianMixture forward(const NetworkParams& params, const InputEncoding& enc, const FeatureKey& key, int week,
                               int woy) {
  detail::Workspace ws;
  const EncodedRecord r = encode(enc, key, week, woy);
  detail::neighbor_means(params, enc, ws.neighbor_mean);
  detail::gather_inputs(params, std::span(&r, 1), ws);
  detail::forward_hidden(params, ws);
  return detail::head_to_mixture(params, ws.out.row(0).data());
}

inline GaussianMixture forward(const DensityModel& m, const FeatureKey& key, int week, int woy) {
  return forward(m.params, m.encoding, key, week, woy);
}

struct DensityQuery {
  FeatureKey key;
  int week = 0;
};

/// Mixtures for many queries in one batched pass.
inline std::vector<GaussianMixture> forward_batch(const DensityModel& m, std::span<const DensityQuery> queries) {
  std::vector<EncodedRecord> enc;
  enc.reserve(queries.size());
  for (const auto& q : queries) enc.push_back(encode(m.encoding, q.key, q.week, week_of_year(q.week)));
  detail::Workspace ws;
  detail::neighbor_means(m.params, m.encoding, ws.neighbor_mean);
  std::vector<GaussianMixture> out;
  out.reserve(queries.size());
  constexpr std::size_t chunk = 4096;
  for (std::size_t start = 0; start < enc.size(); start += chunk) {
    const auto part = std::span(enc).subspan(start, std::min(chunk, enc.size() - start));
    detail::gather_inputs(m.params, part, ws);
    detail::forward_hidden(m.params, ws);
    for (Eigen::Index i = 0; i < ws.out.rows(); ++i) out.push_back(detail::head_to_mixture(m.params, ws.out.row(i).data()));
  }
  return out;
}

struct LossAndGradient {
  double loss = 0.0;
  NetworkParams gradient;
};

/// Mean negative log-likelihood of the records under the network, with its
/// exact gradient.
inline LossAndGradient nll_loss(const NetworkParams& params, const InputEncoding& enc, std::span<const SaleRecord> batch) {
  if (batch.empty()) throw std::invalid_argument("nll_loss: empty batch");
  std::vector<EncodedRecord> rows;
  rows.reserve(batch.size());
  for (const auto& s : batch) rows.push_back(encode(enc, s));
  LossAndGradient out{0.0, params.zeros_like()};
  detail::Workspace ws;
  out.loss = detail::batch_nll(params, enc, rows, &out.gradient, ws);
  return out;
}

/// Per-record negative log-likelihoods without gradients.
inline std::vector<double> record_nll(const DensityModel& m, std::span<const SaleRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  detail::Workspace ws;
  constexpr std::size_t chunk = 4096;
  std::vector<EncodedRecord> rows;
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(records.size(), start + chunk); ++i) rows.push_back(encode(m.encoding, records[i]));
    detail::batch_nll(m.params, m.encoding, rows, nullptr, ws, &out);
  }
  return out;
}

inline double mean_nll(const DensityModel& m, std::span<const SaleRecord> records) {
  if (records.empty()) throw std::invalid_argument("mean_nll: no records");
  const auto v = record_nll(m, records);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Minibatch Adam on the NLL with decoupled weight decay. Each epoch
/// reshuffles and perturbs every record's week by rounded N(0, jitter_sd)
/// noise, clamped to the observed week range.
inline DensityModel train(const Dataset& data, const RegionRegistry& registry, const TrainConfig& config,
                          const std::function<void(int, double)>& on_epoch = {}) {
  config.validate();
  if (data.empty()) throw DataError("train: empty dataset");
  DensityModel model;
  model.config = config;
  model.encoding = InputEncoding::build(data, registry, config.resolution);
  const auto arch = make_architecture(model.encoding, config);

  std::vector<EncodedRecord> rows;
  rows.reserve(data.size());
  double mean = 0.0;
  for (const auto& s : data) {
    rows.push_back(encode(model.encoding, s));
    mean += s.log_price;
  }
  mean /= static_cast<double>(data.size());
  double var = 0.0;
  for (const auto& s : data) var += (s.log_price - mean) * (s.log_price - mean);
  var /= static_cast<double>(data.size());
  const double scale = std::sqrt(std::max(var, 1e-4));

  std::mt19937_64 rng(config.seed);
  model.params = init_params(arch, rng, mean, scale);
  model.meta.seed = config.seed;

  auto& theta = model.params.values();
  std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0);
  NetworkParams grad = model.params.zeros_like();
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const std::size_t n = rows.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const double total_steps = static_cast<double>(steps_per_epoch) * config.epochs;
  std::size_t step = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<EncodedRecord> mb;
  mb.reserve(batch);
  std::normal_distribution<double> jitter(0.0, config.jitter_sd_weeks > 0.0 ? config.jitter_sd_weeks : 1.0);
  const int last_row = model.encoding.week_max - model.encoding.week_min;
  detail::Workspace ws;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      mb.clear();
      for (std::size_t i = start; i < std::min(n, start + batch); ++i) {
        EncodedRecord r = rows[order[i]];
        if (config.jitter_sd_weeks > 0.0) {
          const int shift = static_cast<int>(std::lround(jitter(rng)));
          const int moved = std::clamp(r.week + shift, 0, last_row);
          r.woy = week_of_year(moved + model.encoding.week_min);
          r.week = moved;
        }
        mb.push_back(r);
      }
      std::fill(grad.values().begin(), grad.values().end(), 0.0);
      const double loss = detail::batch_nll(model.params, model.encoding, mb, &grad, ws);
      if (!std::isfinite(loss))
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " (seed " +
                             std::to_string(config.seed) + ")");
      epoch_loss += loss * static_cast<double>(mb.size());

      ++step;
      double lr = config.learning_rate;
      if (config.schedule == LrSchedule::cosine) {
        const double frac = static_cast<double>(step - 1) / std::max(1.0, total_steps - 1.0);
        const double floor = config.final_lr_fraction;
        lr *= floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
      }
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      const auto& g = grad.values();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
        theta[i] -= lr * ((m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps) + config.weight_decay * theta[i]);
      }
    }
    model.meta.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
    if (on_epoch) on_epoch(epoch, model.meta.epoch_loss.back());
  }
  model.meta.final_train_nll = mean_nll(model, data);
  if (!std::isfinite(model.meta.final_train_nll)) throw NumericalError("training produced a non-finite NLL");
  return model;
}

/// Equal-weight ensemble of independently seeded networks.
struct EnsembleModel {
  std::vector<DensityModel> members;

  std::size_t size() const { return members.size(); }
};

/// Trains M members with seeds seed, seed + 1, ..., seed + M - 1.
inline EnsembleModel train_ensemble(const Dataset& data, const RegionRegistry& registry, const TrainConfig& config,
                                    int members) {
  if (members < 1) throw std::invalid_argument("ensemble needs at least one member");
  EnsembleModel out;
  out.members.resize(static_cast<std::size_t>(members));
  parallel_for(out.members.size(), config.threads, [&](std::size_t i) {
    TrainConfig c = config;
    c.seed = config.seed + i;
    out.members[i] = train(data, registry, c);
  });
  return out;
}

/// Equal-weight pool of the members' mixtures.
inline GaussianMixture predict_density(const EnsembleModel& ens, const FeatureKey& key, int week) {
  if (ens.members.empty()) throw std::invalid_argument("empty ensemble");
  std::vector<GaussianMixture> parts;
  parts.reserve(ens.size());
  for (const auto& m : ens.members) parts.push_back(forward(m, key, week, week_of_year(week)));
  return pool(parts);
}

inline std::vector<GaussianMixture> predict_densities(const EnsembleModel& ens, std::span<const DensityQuery> queries) {
  if (ens.members.empty()) throw std::invalid_argument("empty ensemble");
  std::vector<std::vector<GaussianMixture>> per_member;
  for (const auto& m : ens.members) per_member.push_back(forward_batch(m, queries));
  std::vector<GaussianMixture> out;
  out.reserve(queries.size());
  std::vector<GaussianMixture> parts;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    parts.clear();
    for (auto& pm : per_member) parts.push_back(pm[q]);
    out.push_back(pool(parts));
  }
  return out;
}

/// Per-record NLL under the pooled ensemble density.
inline std::vector<double> record_nll(const EnsembleModel& ens, std::span<const SaleRecord> records) {
  if (ens.members.empty()) throw std::invalid_argument("empty ensemble");
  if (ens.size() == 1) return record_nll(ens.members.front(), records);
  std::vector<std::vector<double>> per_member;
  for (const auto& m : ens.members) per_member.push_back(record_nll(m, records));
  const double log_m = std::log(static_cast<double>(ens.size()));
  std::vector<double> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    double mx = -INFINITY;
    for (const auto& v : per_member) mx = std::max(mx, -v[i]);
    double s = 0.0;
    for (const auto& v : per_member) s += std::exp(-v[i] - mx);
    out[i] = -(mx + std::log(s) - log_m);
  }
  return out;
}

inline double mean_nll(const EnsembleModel& ens, std::span<const SaleRecord> records) {
  if (records.empty()) throw std::invalid_argument("mean_nll: no records");
  const auto v = record_nll(ens, records);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"components", c.components},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"schedule", c.schedule == LrSchedule::cosine ? "cosine" : "constant"},
          {"final_lr_fraction", c.final_lr_fraction},
          {"weight_decay", c.weight_decay},
          {"jitter_sd_weeks", c.jitter_sd_weeks},
          {"hidden_width", c.hidden_width},
          {"embedding_dim", c.embedding_dim},
          {"seed", c.seed},
          {"bedrooms", c.resolution.bedrooms},
          {"land_band", c.resolution.land_band}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.components = j.at("components").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.schedule = j.at("schedule").get<std::string>() == "cosine" ? LrSchedule::cosine : LrSchedule::constant;
  c.final_lr_fraction = j.at("final_lr_fraction").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.jitter_sd_weeks = j.at("jitter_sd_weeks").get<double>();
  c.hidden_width = j.at("hidden_width").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.resolution.bedrooms = j.at("bedrooms").get<bool>();
  c.resolution.land_band = j.at("land_band").get<bool>();
  return c;
}

inline nlohmann::json to_json(const DensityModel& m) {
  return {{"config", to_json(m.config)},
          {"encoding", m.encoding.to_json()},
          {"y_center", m.params.y_center},
          {"y_scale", m.params.y_scale},
          {"values", std::vector<double>(m.params.values().begin(), m.params.values().end())},
          {"meta", {{"seed", m.meta.seed}, {"final_train_nll", m.meta.final_train_nll}, {"epoch_loss", m.meta.epoch_loss}}}};
}

inline DensityModel density_model_from_json(const nlohmann::json& j) {
  DensityModel m;
  m.config = train_config_from_json(j.at("config"));
  m.encoding = InputEncoding::from_json(j.at("encoding"));
  m.params = NetworkParams(make_architecture(m.encoding, m.config));
  auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != m.params.size()) throw DataError("model file: parameter count does not match architecture");
  m.params.values().assign(values.begin(), values.end());
  m.params.y_center = j.at("y_center").get<double>();
  m.params.y_scale = j.at("y_scale").get<double>();
  const auto& meta = j.at("meta");
  m.meta.seed = meta.at("seed").get<std::uint64_t>();
  m.meta.final_train_nll = meta.at("final_train_nll").get<double>();
  m.meta.epoch_loss = meta.at("epoch_loss").get<std::vector<double>>();
  return m;
}

inline nlohmann::json to_json(const EnsembleModel& e) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : e.members) members.push_back(to_json(m));
  return {{"format", "granular-mdn-ensemble"}, {"version", kModelFormatVersion}, {"members", std::move(members)}};
}

inline EnsembleModel ensemble_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "granular-mdn-ensemble") throw DataError("model file: unknown format");
    if (j.at("version").get<int>() != kModelFormatVersion) throw DataError("model file: unsupported version");
    EnsembleModel e;
    for (const auto& m : j.at("members")) e.members.push_back(density_model_from_json(m));
    if (e.members.empty()) throw DataError("model file: no members");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("model file: ") + ex.what());
  }
}

inline void save_ensemble(const EnsembleModel& e, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file '" + path + "'");
  out << to_json(e).dump();
}

inline EnsembleModel load_ensemble(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("model file '" + path + "' is not valid JSON: " + ex.what());
  }
  return ensemble_from_json(j);
}

}  // namespace granular
