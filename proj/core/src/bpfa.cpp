#include "cebsd/bpfa.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <numbers>
#include <random>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "cebsd/parallel.hpp"
#include "cebsd/random.hpp"

namespace cebsd {

std::string to_string(MapKind kind) {
  return kind == MapKind::band_contrast ? "bc" : "ipf";
}

MapKind parse_map_kind(const std::string& name) {
  if (name == "bc" || name == "band_contrast") return MapKind::band_contrast;
  if (name == "ipf") return MapKind::ipf;
  throw std::invalid_argument("unknown map kind '" + name + "'");
}

std::string to_string(InitScheme scheme) {
  switch (scheme) {
    case InitScheme::gaussian: return "gaussian";
    case InitScheme::gaussian_dc: return "gaussian_dc";
    case InitScheme::dct: return "dct";
  }
  return "gaussian";
}

InitScheme parse_init_scheme(const std::string& name) {
  if (name == "gaussian") return InitScheme::gaussian;
  if (name == "gaussian_dc") return InitScheme::gaussian_dc;
  if (name == "dct") return InitScheme::dct;
  throw std::invalid_argument("unknown init scheme '" + name + "'");
}

namespace {

struct ShapeRow {
  double rate;
  std::size_t bc;
  std::size_t ipf;
};

constexpr std::array<ShapeRow, 6> kShapeTable{{
    {0.01, 27, 23},
    {0.05, 16, 14},
    {0.10, 10, 13},
    {0.15, 8, 11},
    {0.20, 8, 11},
    {0.25, 6, 9},
}};

}  // namespace

PatchShape select_patch_shape(double rate, MapKind kind) {
  if (!(rate > 0.0) || rate > 1.0) {
    throw std::invalid_argument("select_patch_shape: rate must be in (0, 1]");
  }
  const ShapeRow* best = &kShapeTable[0];
  double best_gap = std::abs(rate - best->rate);
  for (const auto& row : kShapeTable) {
    const double gap = std::abs(rate - row.rate);
    if (gap < best_gap - 1e-12) {
      best = &row;
      best_gap = gap;
    }
  }
  const std::size_t side = kind == MapKind::band_contrast ? best->bc : best->ipf;
  return {side, side};
}

PatchGeometry::PatchGeometry(ProbeGrid grid, PatchShape shape, std::size_t channels)
    : grid_(grid), shape_(shape), channels_(channels) {
  if (shape.height == 0 || shape.width == 0 || channels == 0) {
    throw std::invalid_argument("PatchGeometry: patch shape and channels must be positive");
  }
  if (shape.height > grid.height() || shape.width > grid.width()) {
    throw ShapeError("PatchGeometry: patch " + std::to_string(shape.height) + "x" +
                     std::to_string(shape.width) + " larger than map " + to_string(grid));
  }
  if (patch_len() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("PatchGeometry: patch too long");
  }
}

std::size_t PatchGeometry::probe_of(std::size_t patch, std::size_t element) const noexcept {
  const PixelCoord o = origin(patch);
  const std::size_t pixel = element / channels_;
  return grid_.index_of(o.row + pixel / shape_.width, o.col + pixel % shape_.width);
}

PatchSet::PatchSet(PatchGeometry geometry, std::vector<std::size_t> offsets,
                   std::vector<std::uint32_t> elements, std::vector<double> values)
    : geometry_(geometry),
      offsets_(std::move(offsets)),
      elements_(std::move(elements)),
      values_(std::move(values)) {
  if (offsets_.size() != geometry_.n_patches() + 1 || offsets_.front() != 0 ||
      offsets_.back() != elements_.size() || elements_.size() != values_.size()) {
    throw ShapeError("PatchSet: inconsistent compressed-row arrays");
  }
  for (std::size_t p = 0; p + 1 < offsets_.size(); ++p) {
    if (offsets_[p] > offsets_[p + 1]) throw ShapeError("PatchSet: offsets not monotone");
  }
  for (auto e : elements_) {
    if (e >= geometry_.patch_len()) throw ShapeError("PatchSet: element out of range");
  }
}

template <std::size_t C>
PatchSet extract_patches(const ChannelMap<C>& map, const SampleMask& mask,
                         const PatchGeometry& geometry) {
  if (!(map.grid() == geometry.grid()) || !(mask.grid() == geometry.grid())) {
    throw ShapeError("extract_patches: grid mismatch");
  }
  if (geometry.channels() != C) throw ShapeError("extract_patches: channel count mismatch");
  const auto& shape = geometry.shape();
  const std::size_t n = geometry.n_patches();
  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<std::uint32_t> elements;
  std::vector<double> values;
  for (std::size_t p = 0; p < n; ++p) {
    const PixelCoord o = geometry.origin(p);
    for (std::size_t dr = 0; dr < shape.height; ++dr) {
      for (std::size_t dc = 0; dc < shape.width; ++dc) {
        const std::size_t probe = geometry.grid().index_of(o.row + dr, o.col + dc);
        if (!mask.is_sampled(probe)) continue;
        for (std::size_t ch = 0; ch < C; ++ch) {
          elements.push_back(static_cast<std::uint32_t>((dr * shape.width + dc) * C + ch));
          values.push_back(map.at(ch, probe));
        }
      }
    }
    offsets[p + 1] = elements.size();
  }
  return PatchSet(geometry, std::move(offsets), std::move(elements), std::move(values));
}

template PatchSet extract_patches<1>(const ScalarMap&, const SampleMask&, const PatchGeometry&);
template PatchSet extract_patches<3>(const RgbMap&, const SampleMask&, const PatchGeometry&);

std::size_t BpfaModel::active_count(std::size_t patch) const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < atoms; ++k) n += usage[patch * atoms + k];
  return n;
}

std::vector<double> BpfaModel::predict(std::size_t patch) const {
  std::vector<double> out(patch_len, 0.0);
  for (std::size_t k = 0; k < atoms; ++k) {
    const double a = alpha(patch, k);
    if (a == 0.0) continue;
    const double* d = dictionary.data() + k * patch_len;
    for (std::size_t i = 0; i < patch_len; ++i) out[i] += a * d[i];
  }
  return out;
}

namespace {

constexpr double kPrecisionCap = 1e12;

double safe_log(double x) { return std::log(std::max(x, 1e-300)); }

class Fitter {
 public:
  Fitter(const PatchSet& patches, const BpfaParams& params)
      : patches_(patches), params_(params) {
    n_op_ = patches.geometry().patch_len();
    k_ = params.atoms;
    n_patch_ = patches.size();
    threads_ = params.threads == 0 ? default_thread_count() : params.threads;
    residual_.assign(patches.observed_total(), 0.0);
    var_.assign(n_patch_ * k_, 0.0);
    p_stat_.assign(n_op_ * k_ * k_, 0.0);
    q_stat_.assign(n_op_ * k_, 0.0);
  }

  BpfaModel run();

 private:
  double* dict(std::size_t k) { return m_.dictionary.data() + k * n_op_; }
  const double* dict(std::size_t k) const { return m_.dictionary.data() + k * n_op_; }

  void initialise();
  void refresh_residual(std::size_t p);
  void refresh_patch(std::size_t p);
  void sweep_patch(std::size_t p, Rng& rng);
  void refit_weights(std::size_t p);
  void init_dct();
  void greedy_encode(std::size_t p);
  void support_search(std::size_t p);
  void revive_atoms(std::span<const std::size_t> batch);
  double patch_energy(std::size_t p) const;
  void update_patch(std::size_t p, Rng& rng);
  void add_row_statistics(std::span<const std::size_t> batch, double scale,
                          std::vector<double>& a, std::vector<double>& q) const;
  void weight_step(std::span<const std::size_t> batch, std::uint64_t stream);
  void dictionary_step(std::span<const std::size_t> batch);
  void pi_step(std::span<const std::size_t> batch);
  void noise_step(std::span<const std::size_t> batch);
  void weight_precision_step(std::span<const std::size_t> batch);
  void accumulate_memory(std::span<const std::size_t> batch);
  double objective(std::span<const std::size_t> batch) const;
  double restricted_norm(std::size_t k, std::size_t p) const;

  const PatchSet& patches_;
  const BpfaParams& params_;
  std::size_t n_op_ = 0, k_ = 0, n_patch_ = 0, threads_ = 1;
  BpfaModel m_;
  std::vector<double> residual_;  // aligned with the observed entries of patches_
  std::vector<double> var_;       // v_pk, N_patch x K
  // Per dictionary row i: P_i (K x K, at i * K * K) and Q_i (K, at i * K).
  std::vector<double> p_stat_, q_stat_;
  double n_obs_total_ = 0.0;
  std::vector<double> last_use_;  // per-atom usage count over the previous batch
  double gamma_w_cap_ = kPrecisionCap;
  double gamma_n_cap_ = kPrecisionCap;
};

double Fitter::restricted_norm(std::size_t k, std::size_t p) const {
  const double* d = dict(k);
  double s = 0.0;
  for (auto e : patches_.observed(p)) s += d[e] * d[e];
  return s;
}

void Fitter::initialise() {
  m_.patch_len = n_op_;
  m_.atoms = k_;
  m_.sparsity = params_.sparsity;
  m_.a = params_.a;
  m_.b = params_.b;
  m_.dictionary.assign(n_op_ * k_, 0.0);
  m_.weights.assign(n_patch_ * k_, 0.0);
  m_.usage.assign(n_patch_ * k_, 0);
  m_.pi.assign(k_, 0.5);
  m_.informed.assign(n_patch_, 0);
  for (std::size_t p = 0; p < n_patch_; ++p) m_.informed[p] = !patches_.observed(p).empty();

  Rng rng = make_rng(params_.seed, 0xd1c7);
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(n_op_)));
  for (double& v : m_.dictionary) v = g(rng);
  if (params_.init == InitScheme::gaussian_dc) {
    // One constant atom per channel, unit norm.
    const std::size_t channels = patches_.geometry().channels();
    const double level = 1.0 / std::sqrt(static_cast<double>(n_op_ / channels));
    for (std::size_t ch = 0; ch < std::min(channels, k_); ++ch) {
      double* d = dict(ch);
      for (std::size_t i = 0; i < n_op_; ++i) d[i] = i % channels == ch ? level : 0.0;
    }
  }
  if (params_.init == InitScheme::dct) init_dct();
  if (!params_.initial_dictionary.empty()) m_.dictionary = params_.initial_dictionary;

  // Moments over every observed entry, counted with multiplicity across patches.
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t p = 0; p < n_patch_; ++p) {
    for (double z : patches_.values(p)) {
      sum += z;
      sum_sq += z * z;
    }
  }
  n_obs_total_ = static_cast<double>(patches_.observed_total());
  const double mean = sum / n_obs_total_;
  const double mean_sq = sum_sq / n_obs_total_;
  const double var = std::max(mean_sq - mean * mean, 0.0);
  const double scale = mean_sq > 0.0 ? mean_sq : 1.0;
  gamma_n_cap_ = kPrecisionCap / scale;
  gamma_w_cap_ = kPrecisionCap / scale;
  m_.gamma_d = static_cast<double>(n_op_);
  m_.gamma_n = 1.0 / std::max(var, 1e-6 * scale);
  m_.gamma_w = 1.0 / (static_cast<double>(n_op_) * scale);
}

// Separable DCT-II atoms, lowest frequencies (u + v) first, cycling over channels.
void Fitter::init_dct() {
  const auto& geo = patches_.geometry();
  const std::size_t h = geo.shape().height, w = geo.shape().width, channels = geo.channels();
  std::vector<std::pair<std::size_t, std::size_t>> freqs;
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) freqs.emplace_back(u, v);
  }
  std::stable_sort(freqs.begin(), freqs.end(), [](const auto& x, const auto& y) {
    return x.first + x.second < y.first + y.second;
  });
  auto basis = [](std::size_t f, std::size_t x, std::size_t n) {
    const double scale = std::sqrt((f == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    return scale * std::cos(std::numbers::pi * (2.0 * static_cast<double>(x) + 1.0) *
                            static_cast<double>(f) / (2.0 * static_cast<double>(n)));
  };
  const std::size_t n_basis = std::min(k_, freqs.size() * channels);
  for (std::size_t k = 0; k < n_basis; ++k) {
    const auto [u, v] = freqs[k / channels];
    const std::size_t ch = k % channels;
    double* d = dict(k);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t q = 0; q < channels; ++q) {
          d[(r * w + c) * channels + q] = q == ch ? basis(u, r, h) * basis(v, c, w) : 0.0;
        }
      }
    }
  }
}

void Fitter::refresh_residual(std::size_t p) {
  const auto obs = patches_.observed(p);
  const auto z = patches_.values(p);
  double* r = residual_.data() + patches_.offset(p);
  for (std::size_t j = 0; j < obs.size(); ++j) r[j] = z[j];
  for (std::size_t k = 0; k < k_; ++k) {
    const std::size_t pk = p * k_ + k;
    if (!m_.usage[pk]) continue;
    const double mu = m_.weights[pk];
    const double* d = dict(k);
    for (std::size_t j = 0; j < obs.size(); ++j) r[j] -= mu * d[obs[j]];
  }
}

// Residual from the current dictionary, and every active variance reset to its exact
// minimiser for the current precisions.
void Fitter::refresh_patch(std::size_t p) {
  refresh_residual(p);
  for (std::size_t k = 0; k < k_; ++k) {
    const std::size_t pk = p * k_ + k;
    if (m_.usage[pk]) var_[pk] = 1.0 / (m_.gamma_w + m_.gamma_n * restricted_norm(k, p));
  }
}

// Exact joint minimisation over the means of the active weights of patch p:
// (gamma_n D_A^T D_A + gamma_w I) mu_A = gamma_n D_A^T z on the observed entries.
void Fitter::refit_weights(std::size_t p) {
  std::vector<std::size_t> act;
  for (std::size_t k = 0; k < k_; ++k) {
    if (m_.usage[p * k_ + k]) act.push_back(k);
  }
  if (act.size() < 2) return;  // a single active weight is already at its optimum
  const auto obs = patches_.observed(p);
  const auto z = patches_.values(p);
  const std::size_t na = act.size();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(na, na);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(na);
  for (std::size_t x = 0; x < na; ++x) {
    const double* dx = dict(act[x]);
    for (std::size_t y = x; y < na; ++y) {
      const double* dy = dict(act[y]);
      double s = 0.0;
      for (auto e : obs) s += dx[e] * dy[e];
      g(x, y) = g(y, x) = m_.gamma_n * s;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < obs.size(); ++j) s += dx[obs[j]] * z[j];
    rhs[x] = m_.gamma_n * s;
    g(x, x) += m_.gamma_w;
  }
  const Eigen::VectorXd mu = g.llt().solve(rhs);
  for (std::size_t x = 0; x < na; ++x) m_.weights[p * k_ + act[x]] = mu[x];
  refresh_residual(p);
}

// One pass of exact coordinate updates over the atoms of patch p, in random order, under the
// constraint ||u_p||_0 <= s. When the patch is full, a candidate atom may replace the active
// atom whose removal costs the least, provided the swap lowers F.
void Fitter::sweep_patch(std::size_t p, Rng& rng) {
  const auto obs = patches_.observed(p);
  if (obs.empty()) return;
  const std::size_t n = obs.size();
  double* r = residual_.data() + patches_.offset(p);
  const double gn = m_.gamma_n, gw = m_.gamma_w;

  std::vector<double> dd(k_);
  for (std::size_t k = 0; k < k_; ++k) dd[k] = restricted_norm(k, p);
  std::vector<std::size_t> order(k_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::size_t active = 0;
  for (std::size_t k = 0; k < k_; ++k) active += m_.usage[p * k_ + k];

  auto dot_r = [&](std::size_t k) {
    const double* d = dict(k);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += d[obs[j]] * r[j];
    return s;
  };
  auto axpy = [&](double a, std::size_t k) {  // r -= a d_k
    const double* d = dict(k);
    for (std::size_t j = 0; j < n; ++j) r[j] -= a * d[obs[j]];
  };
  auto logit = [&](std::size_t k) { return safe_log(m_.pi[k]) - safe_log(1.0 - m_.pi[k]); };

  for (std::size_t k : order) {
    const std::size_t pk = p * k_ + k;
    const bool on = m_.usage[pk] != 0;
    const double mu_old = on ? m_.weights[pk] : 0.0;
    const double c = dot_r(k) + mu_old * dd[k];
    const double v = 1.0 / (gw + gn * dd[k]);
    const double mu = v * gn * c;
    // F(u = 0) - F(u = 1) at the optimal (mu, v)
    const double gain = 0.5 * mu * mu / v + 0.5 * std::log(gw * v) + logit(k);
    if (on) {
      if (gain > 0.0) {
        axpy(mu - mu_old, k);
        m_.weights[pk] = mu;
        var_[pk] = v;
      } else {
        axpy(-mu_old, k);
        m_.usage[pk] = 0;
        m_.weights[pk] = 0.0;
        var_[pk] = 0.0;
        --active;
      }
      continue;
    }
    if (!(gain > 0.0)) continue;
    if (active < params_.sparsity) {
      axpy(mu, k);
      m_.usage[pk] = 1;
      m_.weights[pk] = mu;
      var_[pk] = v;
      ++active;
      continue;
    }
    if (params_.sparsity == 0) continue;
    // Cheapest active atom to drop, with its current (mu, v) held fixed.
    std::size_t drop = k_;
    double drop_cost = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k_; ++j) {
      const std::size_t pj = p * k_ + j;
      if (!m_.usage[pj]) continue;
      const double mj = m_.weights[pj], vj = var_[pj];
      const double delta = -gn * mj * dot_r(j) - 0.5 * gn * mj * mj * dd[j] +
                           0.5 * gn * vj * dd[j] + 0.5 * gw * (mj * mj + vj) -
                           0.5 * std::log(gw * vj) - 0.5 - logit(j);
      const double cost = -delta;  // F(without j) - F(with j)
      if (cost < drop_cost) {
        drop_cost = cost;
        drop = j;
      }
    }
    if (drop == k_) continue;
    const double mj = m_.weights[p * k_ + drop];
    const double* dk = dict(k);
    const double* dj = dict(drop);
    double cross = 0.0;
    for (std::size_t j = 0; j < n; ++j) cross += dk[obs[j]] * dj[obs[j]];
    const double mu_s = v * gn * (c + mj * cross);
    const double gain_s = 0.5 * mu_s * mu_s / v + 0.5 * std::log(gw * v) + logit(k);
    if (gain_s > drop_cost) {
      axpy(-mj, drop);
      m_.usage[p * k_ + drop] = 0;
      m_.weights[p * k_ + drop] = 0.0;
      var_[p * k_ + drop] = 0.0;
      axpy(mu_s, k);
      m_.usage[pk] = 1;
      m_.weights[pk] = mu_s;
      var_[pk] = v;
    }
  }
  refit_weights(p);
}

// Forward selection from an empty code: repeatedly activates the atom with the largest
// positive coordinate gain, refitting the active means jointly after each addition.
void Fitter::greedy_encode(std::size_t p) {
  const auto obs = patches_.observed(p);
  const std::size_t n = obs.size();
  const double gn = m_.gamma_n, gw = m_.gamma_w;
  for (std::size_t k = 0; k < k_; ++k) {
    m_.usage[p * k_ + k] = 0;
    m_.weights[p * k_ + k] = 0.0;
    var_[p * k_ + k] = 0.0;
  }
  refresh_residual(p);
  const double* r = residual_.data() + patches_.offset(p);
  std::vector<double> dd(k_);
  for (std::size_t k = 0; k < k_; ++k) dd[k] = restricted_norm(k, p);
  for (std::size_t step = 0; step < params_.sparsity; ++step) {
    double best_gain = 0.0;
    std::size_t best = k_;
    double best_mu = 0.0, best_v = 0.0;
    for (std::size_t k = 0; k < k_; ++k) {
      if (m_.usage[p * k_ + k]) continue;
      const double* d = dict(k);
      double c = 0.0;
      for (std::size_t j = 0; j < n; ++j) c += d[obs[j]] * r[j];
      const double v = 1.0 / (gw + gn * dd[k]);
      const double mu = v * gn * c;
      const double gain = 0.5 * mu * mu / v + 0.5 * std::log(gw * v) + safe_log(m_.pi[k]) -
                          safe_log(1.0 - m_.pi[k]);
      if (gain > best_gain) {
        best_gain = gain;
        best = k;
        best_mu = mu;
        best_v = v;
      }
    }
    if (best == k_) break;
    m_.usage[p * k_ + best] = 1;
    m_.weights[p * k_ + best] = best_mu;
    var_[p * k_ + best] = best_v;
    refresh_residual(p);
    refit_weights(p);
  }
}

// Local search over the support of patch p. Each move adds, drops or swaps one atom and
// refits the means of the new support jointly; the energy of a support follows in closed
// form from Gram entries on the observed elements. Only strict decreases are taken.
void Fitter::support_search(std::size_t p) {
  const auto obs = patches_.observed(p);
  const auto z = patches_.values(p);
  const std::size_t n = obs.size();
  if (n == 0) return;
  const double gn = m_.gamma_n, gw = m_.gamma_w;
  const std::size_t row = p * k_;

  std::vector<double> b(k_, 0.0), dd(k_, 0.0), vv(k_), on_cost(k_), off_cost(k_);
  double zz = 0.0;
  for (std::size_t j = 0; j < n; ++j) zz += z[j] * z[j];
  for (std::size_t k = 0; k < k_; ++k) {
    const double* d = dict(k);
    for (std::size_t j = 0; j < n; ++j) {
      b[k] += d[obs[j]] * z[j];
      dd[k] += d[obs[j]] * d[obs[j]];
    }
    vv[k] = 1.0 / (gw + gn * dd[k]);
    on_cost[k] = 0.5 * gn * vv[k] * dd[k] + 0.5 * gw * vv[k] - 0.5 * std::log(gw * vv[k]) - 0.5 -
                 safe_log(m_.pi[k]);
    off_cost[k] = -safe_log(1.0 - m_.pi[k]);
  }
  // Gram rows are computed on demand for atoms that enter a support.
  std::vector<std::vector<double>> gram(k_);
  auto gram_row = [&](std::size_t a) -> const std::vector<double>& {
    auto& g = gram[a];
    if (g.empty()) {
      g.assign(k_, 0.0);
      const double* da = dict(a);
      for (std::size_t k = 0; k < k_; ++k) {
        const double* dk = dict(k);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += da[obs[j]] * dk[obs[j]];
        g[k] = s;
      }
    }
    return g;
  };
  double all_off = 0.0;
  for (std::size_t k = 0; k < k_; ++k) all_off += off_cost[k];

  auto evaluate = [&](const std::vector<std::size_t>& sup, Eigen::VectorXd& mu) {
    const std::size_t m = sup.size();
    double f = all_off + 0.5 * gn * zz;
    if (m == 0) {
      mu.resize(0);
      return f;
    }
    Eigen::MatrixXd a(m, m);
    Eigen::VectorXd rhs(m);
    for (std::size_t x = 0; x < m; ++x) {
      const auto& gx = gram_row(sup[x]);
      for (std::size_t y = 0; y < m; ++y) a(x, y) = gn * gx[sup[y]];
      a(x, x) += gw;
      rhs[x] = gn * b[sup[x]];
    }
    mu = a.llt().solve(rhs);
    // gn/2 ||z - D mu||^2 + gw/2 ||mu||^2 = gn/2 zz - mu' rhs + mu' A mu / 2 = gn/2 zz - mu' rhs / 2
    f -= 0.5 * mu.dot(rhs);
    for (std::size_t x = 0; x < m; ++x) f += on_cost[sup[x]] - off_cost[sup[x]];
    return f;
  };

  std::vector<std::size_t> cur;
  for (std::size_t k = 0; k < k_; ++k) {
    if (m_.usage[row + k]) cur.push_back(k);
  }
  Eigen::VectorXd mu_cur, mu_try;
  double f_cur = evaluate(cur, mu_cur);
  const double tol = 1e-12 * std::max(1.0, std::abs(f_cur));
  bool changed = false;
  for (std::size_t pass = 0; pass < 4 * params_.sparsity; ++pass) {
    std::vector<std::size_t> best_sup;
    Eigen::VectorXd best_mu;
    double best_f = f_cur - tol;
    auto consider = [&](std::vector<std::size_t> sup) {
      const double f = evaluate(sup, mu_try);
      if (f < best_f) {
        best_f = f;
        best_sup = std::move(sup);
        best_mu = mu_try;
      }
    };
    std::vector<bool> in(k_, false);
    for (auto k : cur) in[k] = true;
    for (std::size_t x = 0; x < cur.size(); ++x) {
      std::vector<std::size_t> sup(cur);
      sup.erase(sup.begin() + static_cast<std::ptrdiff_t>(x));
      consider(sup);
      for (std::size_t k = 0; k < k_; ++k) {
        if (in[k]) continue;
        std::vector<std::size_t> swapped(cur);
        swapped[x] = k;
        consider(std::move(swapped));
      }
    }
    if (cur.size() < params_.sparsity) {
      for (std::size_t k = 0; k < k_; ++k) {
        if (in[k]) continue;
        std::vector<std::size_t> grown(cur);
        grown.push_back(k);
        consider(std::move(grown));
      }
    }
    if (best_f >= f_cur - tol) break;
    cur = std::move(best_sup);
    mu_cur = best_mu;
    f_cur = best_f;
    changed = true;
  }
  if (!changed) return;
  for (std::size_t k = 0; k < k_; ++k) {
    m_.usage[row + k] = 0;
    m_.weights[row + k] = 0.0;
    var_[row + k] = 0.0;
  }
  for (std::size_t x = 0; x < cur.size(); ++x) {
    m_.usage[row + cur[x]] = 1;
    m_.weights[row + cur[x]] = mu_cur[static_cast<Eigen::Index>(x)];
    var_[row + cur[x]] = vv[cur[x]];
  }
  refresh_residual(p);
}

// Atoms that no patch of the previous batch or of this batch uses restart from the
// normalised residual of this batch's worst-fitted patches, one patch per atom. Only their
// prior terms change, so this runs between batches without touching the data fit.
void Fitter::revive_atoms(std::span<const std::size_t> batch) {
  if (last_use_.empty()) return;
  std::vector<double> use(last_use_);
  for (std::size_t p : batch) {
    for (std::size_t k = 0; k < k_; ++k) use[k] += m_.usage[p * k_ + k];
  }
  std::vector<std::size_t> dead;
  for (std::size_t k = 0; k < k_; ++k) {
    if (use[k] == 0.0) dead.push_back(k);
  }
  if (dead.empty()) return;

  std::vector<std::pair<double, std::size_t>> worst;
  for (std::size_t p : batch) {
    const auto obs = patches_.observed(p);
    if (obs.empty()) continue;
    const double* r = residual_.data() + patches_.offset(p);
    double e = 0.0;
    for (std::size_t j = 0; j < obs.size(); ++j) e += r[j] * r[j];
    worst.emplace_back(-e / static_cast<double>(obs.size()), p);
  }
  std::sort(worst.begin(), worst.end());

  const double kd = static_cast<double>(k_);
  const double pi_one = (params_.a / kd + 1.0) /
                        (params_.a / kd + params_.b * (kd - 1.0) / kd +
                         static_cast<double>(batch.size()));
  std::size_t next = 0;
  for (std::size_t k : dead) {
    for (; next < worst.size(); ++next) {
      const std::size_t p = worst[next].second;
      const auto obs = patches_.observed(p);
      const double* r = residual_.data() + patches_.offset(p);
      double norm = 0.0;
      for (std::size_t j = 0; j < obs.size(); ++j) norm += r[j] * r[j];
      if (!(norm > 0.0)) continue;
      norm = std::sqrt(norm);
      double* d = dict(k);
      std::fill(d, d + n_op_, 0.0);
      for (std::size_t j = 0; j < obs.size(); ++j) d[obs[j]] = r[j] / norm;
      m_.pi[k] = pi_one;
      ++next;
      break;
    }
  }
}

// The terms of F that depend on patch p's code.
double Fitter::patch_energy(std::size_t p) const {
  const auto obs = patches_.observed(p);
  const double* r = residual_.data() + patches_.offset(p);
  const double gn = m_.gamma_n, gw = m_.gamma_w;
  double f = 0.0;
  for (std::size_t j = 0; j < obs.size(); ++j) f += 0.5 * gn * r[j] * r[j];
  for (std::size_t k = 0; k < k_; ++k) {
    const std::size_t pk = p * k_ + k;
    if (m_.usage[pk]) {
      const double mu = m_.weights[pk], v = var_[pk];
      f += 0.5 * gn * v * restricted_norm(k, p) + 0.5 * gw * (mu * mu + v) -
           0.5 * std::log(gw * v) - 0.5 - safe_log(m_.pi[k]);
    } else {
      f -= safe_log(1.0 - m_.pi[k]);
    }
  }
  return f;
}

// Coordinate sweep from the current code, then a greedy code from scratch; the one with the
// lower energy is kept, optionally refined by support_search. No stage increases F.
void Fitter::update_patch(std::size_t p, Rng& rng) {
  if (patches_.observed(p).empty()) return;
  sweep_patch(p, rng);
  const double kept = patch_energy(p);
  const std::size_t row = p * k_;
  const std::vector<std::uint8_t> usage(m_.usage.begin() + row, m_.usage.begin() + row + k_);
  const std::vector<double> weights(m_.weights.begin() + row, m_.weights.begin() + row + k_);
  const std::vector<double> var(var_.begin() + row, var_.begin() + row + k_);
  greedy_encode(p);
  if (!(patch_energy(p) < kept)) {
    std::copy(usage.begin(), usage.end(), m_.usage.begin() + row);
    std::copy(weights.begin(), weights.end(), m_.weights.begin() + row);
    std::copy(var.begin(), var.end(), var_.begin() + row);
    refresh_residual(p);
  }
  if (params_.support_search) support_search(p);
}

void Fitter::weight_step(std::span<const std::size_t> batch, std::uint64_t stream) {
  const std::uint64_t base = derive_seed(params_.seed, stream);
  parallel_for(batch.size(), threads_, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = make_rng(base, batch[i]);
      update_patch(batch[i], rng);
    }
  });
}

// Adds scale * gamma_n * sum_p (mu_p mu_p^T + diag(u_p v_p)) to A_i and
// scale * gamma_n * sum_p z_pi mu_p to q_i for every row i observed in patch p.
void Fitter::add_row_statistics(std::span<const std::size_t> batch, double scale,
                                std::vector<double>& a, std::vector<double>& q) const {
  const double g = scale * m_.gamma_n;
  std::vector<std::size_t> act;
  for (std::size_t p : batch) {
    act.clear();
    for (std::size_t k = 0; k < k_; ++k) {
      if (m_.usage[p * k_ + k]) act.push_back(k);
    }
    if (act.empty()) continue;
    const auto obs = patches_.observed(p);
    const auto z = patches_.values(p);
    for (std::size_t j = 0; j < obs.size(); ++j) {
      double* ai = a.data() + static_cast<std::size_t>(obs[j]) * k_ * k_;
      double* qi = q.data() + static_cast<std::size_t>(obs[j]) * k_;
      for (std::size_t x : act) {
        const double mx = m_.weights[p * k_ + x];
        qi[x] += g * mx * z[j];
        for (std::size_t y : act) ai[x * k_ + y] += g * mx * m_.weights[p * k_ + y];
        ai[x * k_ + x] += g * var_[p * k_ + x];
      }
    }
  }
}

// Exact joint minimisation over every row of D: row i solves
// (gamma_d I + P_i + A_i) d_i = Q_i + q_i, with A_i, q_i the statistics of the batch.
void Fitter::dictionary_step(std::span<const std::size_t> batch) {
  std::vector<double> a(p_stat_), q(q_stat_);
  add_row_statistics(batch, 1.0, a, q);
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  parallel_for(n_op_, threads_, [&](std::size_t begin, std::size_t end) {
    Matrix m(k_, k_);
    Eigen::VectorXd rhs(k_);
    for (std::size_t i = begin; i < end; ++i) {
      m = Eigen::Map<const Matrix>(a.data() + i * k_ * k_, k_, k_);
      m.diagonal().array() += m_.gamma_d;
      rhs = Eigen::Map<const Eigen::VectorXd>(q.data() + i * k_, k_);
      const Eigen::VectorXd row = m.llt().solve(rhs);
      for (std::size_t k = 0; k < k_; ++k) m_.dictionary[k * n_op_ + i] = row[k];
    }
  });
  for (std::size_t p : batch) refresh_residual(p);
}

void Fitter::pi_step(std::span<const std::size_t> batch) {
  const double kd = static_cast<double>(k_);
  const double alpha = params_.a / kd;
  const double beta = params_.b * (kd - 1.0) / kd;
  const double nb = static_cast<double>(batch.size());
  for (std::size_t k = 0; k < k_; ++k) {
    double used = 0.0;
    for (std::size_t p : batch) used += m_.usage[p * k_ + k];
    m_.pi[k] = (alpha + used) / (alpha + beta + nb);
  }
}

void Fitter::noise_step(std::span<const std::size_t> batch) {
  double ssr = 0.0, n_obs = 0.0;
  for (std::size_t p : batch) {
    const auto obs = patches_.observed(p);
    const double* r = residual_.data() + patches_.offset(p);
    for (std::size_t j = 0; j < obs.size(); ++j) ssr += r[j] * r[j];
    n_obs += static_cast<double>(obs.size());
    for (std::size_t k = 0; k < k_; ++k) {
      if (m_.usage[p * k_ + k]) ssr += var_[p * k_ + k] * restricted_norm(k, p);
    }
  }
  if (n_obs == 0.0) return;
  m_.gamma_n = ssr > 0.0 ? std::min(n_obs / ssr, gamma_n_cap_) : gamma_n_cap_;
}

void Fitter::weight_precision_step(std::span<const std::size_t> batch) {
  double second = 0.0, n_active = 0.0;
  for (std::size_t p : batch) {
    for (std::size_t k = 0; k < k_; ++k) {
      const std::size_t pk = p * k_ + k;
      if (!m_.usage[pk]) continue;
      second += m_.weights[pk] * m_.weights[pk] + var_[pk];
      n_active += 1.0;
    }
  }
  if (n_active == 0.0) return;
  m_.gamma_w = second > 0.0 ? std::min(n_active / second, gamma_w_cap_) : gamma_w_cap_;
}

void Fitter::accumulate_memory(std::span<const std::size_t> batch) {
  const double lambda = params_.memory_decay;
  for (double& v : p_stat_) v *= lambda;
  for (double& v : q_stat_) v *= lambda;
  if (lambda == 0.0) return;
  add_row_statistics(batch, lambda, p_stat_, q_stat_);
}

double Fitter::objective(std::span<const std::size_t> batch) const {
  const double gn = m_.gamma_n, gw = m_.gamma_w;
  std::vector<double> log_on(k_), log_off(k_);
  for (std::size_t k = 0; k < k_; ++k) {
    log_on[k] = safe_log(m_.pi[k]);
    log_off[k] = safe_log(1.0 - m_.pi[k]);
  }
  double f = 0.0;
  for (std::size_t p : batch) {
    const auto obs = patches_.observed(p);
    const double* r = residual_.data() + patches_.offset(p);
    double ssr = 0.0;
    for (std::size_t j = 0; j < obs.size(); ++j) ssr += r[j] * r[j];
    f += 0.5 * gn * ssr - 0.5 * static_cast<double>(obs.size()) * std::log(gn);
    for (std::size_t k = 0; k < k_; ++k) {
      const std::size_t pk = p * k_ + k;
      if (m_.usage[pk]) {
        const double mu = m_.weights[pk], v = var_[pk];
        f += 0.5 * gn * v * restricted_norm(k, p) + 0.5 * gw * (mu * mu + v) -
             0.5 * std::log(gw * v) - 0.5 - log_on[k];
      } else {
        f -= log_off[k];
      }
    }
  }
  const double kd = static_cast<double>(k_);
  double d2 = 0.0, mem = 0.0;
  for (double d : m_.dictionary) d2 += d * d;
  std::vector<double> row(k_);
  for (std::size_t i = 0; i < n_op_; ++i) {
    for (std::size_t k = 0; k < k_; ++k) row[k] = m_.dictionary[k * n_op_ + i];
    const double* pi = p_stat_.data() + i * k_ * k_;
    const double* qi = q_stat_.data() + i * k_;
    for (std::size_t x = 0; x < k_; ++x) {
      if (row[x] == 0.0) continue;
      double px = 0.0;
      for (std::size_t y = 0; y < k_; ++y) px += pi[x * k_ + y] * row[y];
      mem += 0.5 * row[x] * px - qi[x] * row[x];
    }
  }
  f += 0.5 * m_.gamma_d * d2 + mem;
  for (std::size_t k = 0; k < k_; ++k) {
    f -= params_.a / kd * log_on[k] + params_.b * (kd - 1.0) / kd * log_off[k];
  }
  return f;
}

BpfaModel Fitter::run() {
  initialise();
  std::vector<std::size_t> order(n_patch_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch_size = std::max<std::size_t>(params_.batch_size, 1);
  std::uint64_t stream = 1;
  for (std::size_t epoch = 0; epoch < params_.epochs; ++epoch) {
    Rng shuffle_rng = make_rng(params_.seed, 0x5eed0000ULL + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < n_patch_; start += batch_size) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(batch_size, n_patch_ - start));
      parallel_for(batch.size(), threads_, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) refresh_patch(batch[i]);
      });
      revive_atoms(batch);
      std::vector<double> trace{objective(batch)};
      for (std::size_t it = 0; it < params_.em_iters_per_batch; ++it) {
        weight_step(batch, stream++);
        dictionary_step(batch);
        pi_step(batch);
        noise_step(batch);
        weight_precision_step(batch);
        trace.push_back(objective(batch));
      }
      m_.objective_trace.push_back(std::move(trace));
      accumulate_memory(batch);
      last_use_.assign(k_, 0.0);
      for (std::size_t p : batch) {
        for (std::size_t k = 0; k < k_; ++k) last_use_[k] += m_.usage[p * k_ + k];
      }
    }
  }
  // Encode every patch against the final dictionary.
  parallel_for(n_patch_, threads_, [&](std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) refresh_patch(p);
  });
  for (std::size_t s = 0; s < params_.final_sweeps; ++s) {
    const std::uint64_t base = derive_seed(params_.seed, 0xf1a1000ULL + s);
    parallel_for(n_patch_, threads_, [&](std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        Rng rng = make_rng(base, p);
        update_patch(p, rng);
      }
    });
  }
  return std::move(m_);
}

}  // namespace

BpfaModel bpfa_fit(const PatchSet& patches, const BpfaParams& params) {
  if (params.atoms == 0) throw std::invalid_argument("bpfa_fit: atoms must be positive");
  if (params.sparsity == 0) throw std::invalid_argument("bpfa_fit: sparsity must be positive");
  if (params.a <= 0.0 || params.b <= 0.0) {
    throw std::invalid_argument("bpfa_fit: a and b must be positive");
  }
  if (params.memory_decay < 0.0 || params.memory_decay > 1.0) {
    throw std::invalid_argument("bpfa_fit: memory_decay must be in [0, 1]");
  }
  if (patches.observed_total() == 0) {
    throw std::invalid_argument("bpfa_fit: no observed entries in any patch");
  }
  if (!params.initial_dictionary.empty() &&
      params.initial_dictionary.size() != patches.geometry().patch_len() * params.atoms) {
    throw ShapeError("bpfa_fit: initial dictionary must be N_op x K");
  }
  return Fitter(patches, params).run();
}

template <std::size_t C>
ChannelMap<C> reconstruct(const BpfaModel& model, const PatchGeometry& geometry, double lo,
                          double hi) {
  if (geometry.channels() != C || geometry.patch_len() != model.patch_len ||
      geometry.n_patches() != model.patch_count()) {
    throw ShapeError("reconstruct: model does not match patch geometry");
  }
  const std::size_t n = geometry.grid().count();
  std::vector<double> sum(n * C, 0.0);
  std::vector<double> hits(n, 0.0);
  const auto& shape = geometry.shape();
  for (std::size_t p = 0; p < geometry.n_patches(); ++p) {
    if (!model.informed.empty() && !model.informed[p]) continue;
    const auto pred = model.predict(p);
    const PixelCoord o = geometry.origin(p);
    for (std::size_t dr = 0; dr < shape.height; ++dr) {
      for (std::size_t dc = 0; dc < shape.width; ++dc) {
        const std::size_t probe = geometry.grid().index_of(o.row + dr, o.col + dc);
        hits[probe] += 1.0;
        for (std::size_t ch = 0; ch < C; ++ch) {
          sum[ch * n + probe] += pred[(dr * shape.width + dc) * C + ch];
        }
      }
    }
  }
  std::array<std::vector<double>, C> channels;
  for (std::size_t ch = 0; ch < C; ++ch) {
    channels[ch].assign(n, lo);
    for (std::size_t i = 0; i < n; ++i) {
      if (hits[i] > 0.0) channels[ch][i] = std::clamp(sum[ch * n + i] / hits[i], lo, hi);
    }
  }
  return ChannelMap<C>(geometry.grid(), std::move(channels));
}

template ScalarMap reconstruct<1>(const BpfaModel&, const PatchGeometry&, double, double);
template RgbMap reconstruct<3>(const BpfaModel&, const PatchGeometry&, double, double);

namespace {

template <std::size_t C>
void reimpose(ChannelMap<C>& out, const ChannelMap<C>& in, const SampleMask& mask) {
  for (std::size_t probe : mask.sampled()) {
    for (std::size_t ch = 0; ch < C; ++ch) out.set(ch, probe, in.at(ch, probe));
  }
}

}  // namespace

ScalarMap inpaint(const ScalarMap& map, const SampleMask& mask, const InpaintOptions& options) {
  if (!(map.grid() == mask.grid())) throw ShapeError("inpaint: grid mismatch");
  if (mask.sampled_count() == 0) throw std::invalid_argument("inpaint: mask has no samples");
  // Range taken over the observed probes only.
  std::vector<double> filled(map.size(), map[mask.sampled()[0]]);
  for (std::size_t probe : mask.sampled()) filled[probe] = map[probe];
  const auto norm = normalize_map(ScalarMap(map.grid(), std::move(filled)), 0.0, 255.0);

  const PatchGeometry geometry(map.grid(), options.patch, 1);
  const auto patches = extract_patches(norm.map, mask, geometry);
  const auto model = bpfa_fit(patches, options.bpfa);
  auto out = denormalize_map(reconstruct<1>(model, geometry, 0.0, 255.0), norm.record);
  if (options.reimpose_observed) reimpose(out, map, mask);
  return out;
}

RgbMap inpaint(const RgbMap& map, const SampleMask& mask, const InpaintOptions& options) {
  if (!(map.grid() == mask.grid())) throw ShapeError("inpaint: grid mismatch");
  if (mask.sampled_count() == 0) throw std::invalid_argument("inpaint: mask has no samples");
  const PatchGeometry geometry(map.grid(), options.patch, 3);
  const auto patches = extract_patches(map, mask, geometry);
  const auto model = bpfa_fit(patches, options.bpfa);
  auto out = reconstruct<3>(model, geometry, 0.0, 1.0);
  if (options.reimpose_observed) reimpose(out, map, mask);
  return out;
}

}  // namespace cebsd
