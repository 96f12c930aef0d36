#include "cebsd/noise.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "cebsd/map_core.hpp"
#include "cebsd/random.hpp"

namespace cebsd {

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::none:
      return "none";
    case NoiseKind::gaussian:
      return "gaussian";
    case NoiseKind::poisson:
      return "poisson";
  }
  return "unknown";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "none" || name == "noiseless") return NoiseKind::none;
  if (name == "gaussian") return NoiseKind::gaussian;
  if (name == "poisson") return NoiseKind::poisson;
  throw std::invalid_argument("unknown noise kind '" + name + "'");
}

namespace {

double l2_squared(std::span<const double> y) {
  double s = 0.0;
  for (double v : y) s += v * v;
  return s;
}

double l1_nonnegative(std::span<const double> y, const char* who) {
  double s = 0.0;
  for (double v : y) {
    if (v < 0.0) throw std::invalid_argument(std::string(who) + ": negative entry");
    s += v;
  }
  return s;
}

}  // namespace

double measure_snr(std::span<const double> reference, std::span<const double> corrupted) {
  if (reference.size() != corrupted.size()) {
    throw ShapeError("measure_snr: length mismatch");
  }
  const double signal = l2_squared(reference);
  if (signal == 0.0) throw std::invalid_argument("measure_snr: reference has zero norm");
  double err = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = reference[i] - corrupted[i];
    err += d * d;
  }
  if (err == 0.0) return kInfiniteSnr;
  return 10.0 * std::log10(signal / err);
}

double gaussian_sigma(std::span<const double> y, double target_snr_db) {
  const double norm = std::sqrt(l2_squared(y));
  if (norm == 0.0) throw std::invalid_argument("gaussian_sigma: zero vector");
  return norm / std::sqrt(static_cast<double>(y.size())) * std::pow(10.0, -target_snr_db / 20.0);
}

std::vector<double> add_gaussian_noise(std::span<const double> y, const NoiseSpec& spec) {
  if (spec.kind != NoiseKind::gaussian) {
    throw std::invalid_argument("add_gaussian_noise: spec is not gaussian");
  }
  const double sigma = gaussian_sigma(y, spec.target_snr_db);
  std::vector<double> out(y.begin(), y.end());
  if (sigma == 0.0) return out;
  Rng rng = make_rng(spec.seed, 0x6a55);
  std::normal_distribution<double> eta(0.0, sigma);
  for (double& v : out) v += eta(rng);
  return out;
}

double poisson_scale(std::span<const double> y, double target_snr_db) {
  const double l1 = l1_nonnegative(y, "poisson_scale");
  if (l1 == 0.0) throw std::invalid_argument("poisson_scale: zero vector");
  return l1 * l1 / l2_squared(y) * std::pow(10.0, target_snr_db / 10.0);
}

std::vector<double> poisson_mean(std::span<const double> y, double sigma_psn) {
  const double l1 = l1_nonnegative(y, "poisson_mean");
  if (l1 == 0.0) throw std::invalid_argument("poisson_mean: zero vector");
  std::vector<double> lambda(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) lambda[i] = sigma_psn * y[i] / l1;
  return lambda;
}

std::vector<double> add_poisson_noise(std::span<const double> y, double sigma_psn,
                                      std::uint64_t seed) {
  if (!(sigma_psn > 0.0) || !std::isfinite(sigma_psn)) {
    throw std::invalid_argument("add_poisson_noise: sigma_psn must be positive and finite");
  }
  const auto lambda = poisson_mean(y, sigma_psn);
  Rng rng = make_rng(seed, 0x9015);
  std::vector<double> out(y.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (lambda[i] > 0.0) {
      std::poisson_distribution<long long> draw(lambda[i]);
      out[i] = static_cast<double>(draw(rng));
    }
  }
  return out;
}

std::vector<double> add_poisson_noise(std::span<const double> y, const NoiseSpec& spec) {
  if (spec.kind != NoiseKind::poisson) {
    throw std::invalid_argument("add_poisson_noise: spec is not poisson");
  }
  return add_poisson_noise(y, poisson_scale(y, spec.target_snr_db), spec.seed);
}

Corrupted corrupt(std::span<const double> y, const NoiseSpec& spec) {
  switch (spec.kind) {
    case NoiseKind::none:
      return {std::vector<double>(y.begin(), y.end()), std::vector<double>(y.begin(), y.end())};
    case NoiseKind::gaussian:
      return {add_gaussian_noise(y, spec), std::vector<double>(y.begin(), y.end())};
    case NoiseKind::poisson: {
      const double scale = poisson_scale(y, spec.target_snr_db);
      return {add_poisson_noise(y, scale, spec.seed), poisson_mean(y, scale)};
    }
  }
  throw std::invalid_argument("corrupt: unknown noise kind");
}

}  // namespace cebsd
