#include <cmath>
#include <numeric>

#include "doctest.h"

#include "cebsd/noise.hpp"
#include "cebsd/phantom.hpp"

using namespace cebsd;

TEST_SUITE("noise") {

TEST_CASE("measure_snr worked values") {
  const std::vector<double> u{3, 4};
  CHECK(measure_snr(u, u) == kInfiniteSnr);
  CHECK(measure_snr(u, std::vector<double>{6, 8}) == doctest::Approx(0.0));
  CHECK(measure_snr(u, std::vector<double>{3, 4.5}) == doctest::Approx(20.0));
  CHECK_THROWS_AS(measure_snr(std::vector<double>{0, 0}, u), std::invalid_argument);
  CHECK_THROWS_AS(measure_snr(u, std::vector<double>{1}), ShapeError);
}

TEST_CASE("measure_snr invariant under a shared permutation") {
  const std::vector<double> u{1, 2, 3, 4, 5}, v{1.1, 2.3, 2.9, 4.4, 5.0};
  const std::vector<double> pu{4, 1, 5, 3, 2}, pv{4.4, 1.1, 5.0, 2.9, 2.3};
  CHECK(measure_snr(u, v) == doctest::Approx(measure_snr(pu, pv)));
}

TEST_CASE("gaussian_sigma worked values") {
  CHECK(gaussian_sigma(std::vector<double>{3, 4}, 20.0) ==
        doctest::Approx(5.0 / std::sqrt(2.0) * 0.1));
  CHECK(gaussian_sigma(std::vector<double>{1, 1, 1, 1}, 0.0) == doctest::Approx(1.0));
  CHECK(gaussian_sigma(std::vector<double>{1, 1}, 400.0) < 1e-19);
  CHECK_THROWS_AS(gaussian_sigma(std::vector<double>{0, 0}, 5.0), std::invalid_argument);
}

TEST_CASE("gaussian noise: deterministic, calibrated at 20 dB over 1e5 entries") {
  std::vector<double> y(100000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 + std::sin(0.01 * double(i));
  const NoiseSpec spec{NoiseKind::gaussian, 20.0, 5};
  CHECK(add_gaussian_noise(y, spec) == add_gaussian_noise(y, spec));
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    mean += measure_snr(y, add_gaussian_noise(y, {NoiseKind::gaussian, 20.0, s})) / 10.0;
  }
  CHECK(std::abs(mean - 20.0) <= 0.3);
  const auto same = add_gaussian_noise(y, {NoiseKind::gaussian, kInfiniteSnr, 1});
  CHECK(same == y);
}

TEST_CASE("poisson_scale worked values") {
  CHECK(poisson_scale(std::vector<double>{1, 1, 1, 1}, 10.0) == doctest::Approx(40.0));
  CHECK(poisson_scale(std::vector<double>{1}, 0.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(poisson_scale(std::vector<double>{1, -1}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(poisson_scale(std::vector<double>{0, 0}, 0.0), std::invalid_argument);
}

TEST_CASE("poisson_scale is invariant to scaling y") {
  // ||2y||_1^2 / ||2y||^2 = ||y||_1^2 / ||y||^2
  const std::vector<double> y{0.5, 1.0, 3.0, 0.25, 2.0};
  std::vector<double> y2(y);
  for (auto& v : y2) v *= 2.0;
  CHECK(poisson_scale(y2, 7.0) == doctest::Approx(poisson_scale(y, 7.0)));
}

TEST_CASE("poisson single entry: mean over 1e4 seeds within 3 sqrt(K)/100 of K") {
  const std::vector<double> y{0.0, 2.5, 0.0};
  const double k = 50.0;
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 10000; ++s) mean += add_poisson_noise(y, k, s)[1];
  mean /= 10000.0;
  CHECK(std::abs(mean - k) <= 3.0 * std::sqrt(k) / 100.0);
}

TEST_CASE("poisson output is integer counts with variance close to mean") {
  const std::vector<double> y{1.0, 2.0, 4.0, 8.0};
  const double scale = 120.0;
  const auto mu = poisson_mean(y, scale);
  const int n = 4000;
  std::vector<double> sum(4, 0.0), sq(4, 0.0);
  for (int s = 0; s < n; ++s) {
    const auto v = add_poisson_noise(y, scale, static_cast<std::uint64_t>(s));
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(v[i] >= 0.0);
      CHECK(v[i] == std::round(v[i]));
      sum[i] += v[i];
      sq[i] += v[i] * v[i];
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const double m = sum[i] / n;
    const double var = sq[i] / n - m * m;
    CHECK(std::abs(m - mu[i]) <= 3.0 * std::sqrt(mu[i] / n));
    // sample variance of a Poisson variable has std ~ sqrt((mu + 2 mu^2) / n)
    CHECK(std::abs(var - mu[i]) <= 3.0 * std::sqrt((mu[i] + 2 * mu[i] * mu[i]) / n));
  }
  CHECK_THROWS_AS(add_poisson_noise(std::vector<double>{0, 0}, 10.0, 1), std::invalid_argument);
}

TEST_CASE("poisson at 5 dB on a synthetic pattern lands within 1 dB") {
  const auto p = synth_pattern({0.3, 0.6, 0.2}, 64, 48, 6, 3.0, 3.0);
  REQUIRE(p.size() == 3072);
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    mean += corrupt(p.intensities(), {NoiseKind::poisson, 5.0, s}).snr_db() / 10.0;
  }
  CHECK(std::abs(mean - 5.0) <= 1.0);
}

TEST_CASE("per-probe streams and the noiseless kind") {
  const NoiseSpec s{NoiseKind::gaussian, 3.0, 0xabc};
  CHECK(s.for_stream(5).seed == (0xabcULL ^ 5ULL));
  const std::vector<double> y{1, 2, 3};
  const auto c = corrupt(y, {NoiseKind::none, 0.0, 1});
  CHECK(c.values == y);
  CHECK(parse_noise_kind(to_string(NoiseKind::poisson)) == NoiseKind::poisson);
  CHECK_THROWS_AS(parse_noise_kind("speckle"), std::invalid_argument);
}

}
