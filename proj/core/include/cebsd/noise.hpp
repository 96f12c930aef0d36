#pragma once

// SNR-targeted Gaussian and Poisson corruption of patterns (or any real vector).

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace cebsd {

enum class NoiseKind { none, gaussian, poisson };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double target_snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;

  /// Per-probe stream: seed ^ index. Keeps corruption independent of worker scheduling.
  NoiseSpec for_stream(std::uint64_t index) const { return {kind, target_snr_db, seed ^ index}; }
};

/// Returned by measure_snr when the two vectors are identical.
inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

/// 20 log10(||u|| / ||u - v||) in dB.
double measure_snr(std::span<const double> reference, std::span<const double> corrupted);

/// sigma = ||y|| / sqrt(N) * 10^(-SNR/20), N = y.size().
double gaussian_sigma(std::span<const double> y, double target_snr_db);

std::vector<double> add_gaussian_noise(std::span<const double> y, const NoiseSpec& spec);

/// sigma_psn = ||y||_1^2 / ||y||_2^2 * 10^(SNR/10): the expected total count.
double poisson_scale(std::span<const double> y, double target_snr_db);

/// Noiseless mean of the Poisson draw, sigma_psn * y_i / ||y||_1.
std::vector<double> poisson_mean(std::span<const double> y, double sigma_psn);

/// Counts drawn with mean sigma_psn * y_i / ||y||_1 (left unscaled, as integer counts).
std::vector<double> add_poisson_noise(std::span<const double> y, double sigma_psn,
                                      std::uint64_t seed);
std::vector<double> add_poisson_noise(std::span<const double> y, const NoiseSpec& spec);

/// Output of `corrupt`: the noisy vector and the noiseless vector on the same scale
/// (y itself for Gaussian noise, the Poisson mean for Poisson noise).
struct Corrupted {
  std::vector<double> values;
  std::vector<double> clean;

  double snr_db() const { return measure_snr(clean, values); }
};

Corrupted corrupt(std::span<const double> y, const NoiseSpec& spec);

}  // namespace cebsd
