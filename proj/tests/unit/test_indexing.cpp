#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"

#include "cebsd/indexing.hpp"
#include "cebsd/metrics.hpp"
#include "cebsd/sampling.hpp"

using namespace cebsd;

namespace {

constexpr double kPi = std::numbers::pi;

/// Pattern with unit intensity on pixels within half_width of each (theta, rho) line, using
/// the detector-centre convention of band_lines.
Pattern line_pattern(std::size_t h, std::size_t w, const std::vector<BandLine>& lines,
                     double half_width, double background, double amplitude) {
  std::vector<double> v(h * w, background);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double x = double(c) - 0.5 * double(w - 1);
      const double y = double(r) - 0.5 * double(h - 1);
      for (const auto& l : lines) {
        if (std::abs(x * std::cos(l.theta) + y * std::sin(l.theta) - l.rho) <= half_width) {
          v[r * w + c] = background + amplitude;
        }
      }
    }
  }
  return Pattern(h, w, std::move(v));
}

/// Brute-force accumulator bin: sum of intensities whose rho at theta_t falls in bin r.
double brute_bin(const Pattern& p, std::size_t nt, std::size_t nr, std::size_t t, std::size_t r) {
  const double rho_max = 0.5 * std::hypot(double(p.height()), double(p.width()));
  const double step = 2 * rho_max / double(nr);
  const double theta = kPi * double(t) / double(nt);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.height(); ++i) {
    for (std::size_t j = 0; j < p.width(); ++j) {
      const double x = double(j) - 0.5 * double(p.width() - 1);
      const double y = double(i) - 0.5 * double(p.height() - 1);
      const double rho = x * std::cos(theta) + y * std::sin(theta);
      auto b = static_cast<long>(std::floor((rho + rho_max) / step));
      b = std::clamp<long>(b, 0, long(nr) - 1);
      if (static_cast<std::size_t>(b) == r) sum += p(i, j);
    }
  }
  return sum;
}

}  // namespace

TEST_SUITE("indexing") {

TEST_CASE("hough: resolution check and mass conservation") {
  const auto p = synth_pattern({0.2, 0.4, 0.6}, 64, 48, 6, 3.0, 3.0);
  CHECK_THROWS_AS(hough_transform(p, 4, 40), std::invalid_argument);
  const auto acc = hough_transform(p, 40, 40);
  CHECK(acc.bins.size() == 1600);
  double mass = 0.0, total = 0.0;
  for (double b : acc.bins) mass += b;
  for (double v : p.intensities()) total += v;
  CHECK(mass == doctest::Approx(40 * total).epsilon(1e-12));
  CHECK(acc.rho_max == doctest::Approx(40.0));
}

TEST_CASE("hough: uniform pattern has no unique peak") {
  const Pattern flat(64, 48, std::vector<double>(64 * 48, 1.0));
  auto bins = hough_transform(flat, 40, 40).bins;
  std::sort(bins.begin(), bins.end(), std::greater<>());
  CHECK(bins[1] >= 0.99 * bins[0]);
}

TEST_CASE("hough: single line peaks in its own bin; bins match brute force") {
  const std::size_t nt = 40, nr = 40;
  for (std::size_t t : {0u, 7u, 10u, 23u, 33u}) {
    for (std::size_t r : {14u, 20u, 25u}) {
      HoughAccumulator probe;
      probe.n_theta = nt;
      probe.n_rho = nr;
      probe.rho_max = 40.0;
      const BandLine line{probe.theta_of(t), probe.rho_of(r)};
      const auto p = line_pattern(64, 48, {line}, 0.5, 0.0, 1.0);
      const auto acc = hough_transform(p, nt, nr);
      const auto arg = static_cast<std::size_t>(
          std::max_element(acc.bins.begin(), acc.bins.end()) - acc.bins.begin());
      CHECK(arg == t * nr + r);
      for (std::size_t tt = 0; tt < nt; tt += 9) {
        for (std::size_t rr = 0; rr < nr; rr += 3) {
          CHECK(acc.at(tt, rr) == doctest::Approx(brute_bin(p, nt, nr, tt, rr)));
        }
      }
    }
  }
}

TEST_CASE("detect_bands: empty accumulator, max_bands cap, known bands") {
  HoughAccumulator zero;
  zero.n_theta = zero.n_rho = 8;
  zero.rho_max = 4;
  zero.bins.assign(64, 0.0);
  CHECK(detect_bands(zero, 5, 1.0).empty());

  HoughAccumulator probe;
  probe.n_theta = probe.n_rho = 40;
  probe.rho_max = 40.0;
  const std::vector<std::pair<std::size_t, std::size_t>> truth{{0, 20}, {13, 26}, {27, 14}};
  std::vector<BandLine> lines;
  for (auto [t, r] : truth) lines.push_back({probe.theta_of(t), probe.rho_of(r)});
  const auto p = line_pattern(64, 48, lines, 1.5, 1.0, 3.0);
  const IndexingParams ip;
  const auto acc = line_mean_transform(p, ip);
  const auto bands = detect_bands(acc, ip.detection);
  REQUIRE(bands.size() == 3);
  for (auto [t, r] : truth) {
    const bool hit = std::any_of(bands.begin(), bands.end(), [&](const Band& b) {
      return std::abs(long(b.theta_bin) - long(t)) <= 1 && std::abs(long(b.rho_bin) - long(r)) <= 1;
    });
    CHECK(hit);
  }
  CHECK(detect_bands(acc, 1, ip.detection.min_prominence).size() == 1);
  CHECK_THROWS_AS(detect_bands(acc, 0, 1.0), std::invalid_argument);
}

TEST_CASE("band_contrast: flat, empty, analytic amplitude") {
  const Pattern flat(64, 48, std::vector<double>(64 * 48, 2.0));
  const auto lines = band_lines({0.3, 0.6, 0.1}, 64, 48, 6);
  CHECK(band_contrast(flat, lines, 1.5) == 0.0);
  CHECK(band_contrast(flat, std::vector<Band>{}, 1.5) == 0.0);
  // Background is 1 and each band adds amp, so the in-band mean is 1 + amp * (mean number of
  // bands covering an in-band pixel).
  std::size_t in_n = 0, cover = 0;
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 48; ++c) {
      const double x = double(c) - 23.5, y = double(r) - 31.5;
      std::size_t k = 0;
      for (const auto& l : lines) k += std::abs(x * std::cos(l.theta) + y * std::sin(l.theta) - l.rho) <= 1.5;
      in_n += k > 0;
      cover += k;
    }
  }
  const double factor = double(cover) / double(in_n);
  for (double amp : {0.5, 1.5, 3.0}) {
    const auto p = synth_pattern({0.3, 0.6, 0.1}, 64, 48, 6, 3.0, amp);
    CHECK(band_contrast(p, lines, 1.5) == doctest::Approx(amp * factor).epsilon(1e-12));
  }
}

TEST_CASE("index_pattern: self match, zero pattern, signature distance") {
  const auto gm = voronoi_phantom(ProbeGrid(32, 32), 8, 7);
  const PatternParams pp;
  const IndexingParams ip;
  const auto lib = build_library(gm.orientations(), pp, ip);
  CHECK(lib.size() == 8);
  for (const auto& e : lib.entries()) {
    CHECK(signature_distance(e.signature, e.signature, ip) == 0.0);
    const auto p = synth_pattern(e.orientation, pp.height, pp.width, pp.n_bands, pp.band_width,
                                 pp.amplitude);
    const auto res = index_pattern(p, lib, ip);
    REQUIRE_FALSE(res.is_zsp());
    CHECK(*res.orientation == e.orientation);
    CHECK(res.n_bands_found >= ip.min_bands_required);
  }
  const Pattern zero(pp.height, pp.width, std::vector<double>(pp.height * pp.width, 0.0));
  CHECK(index_pattern(zero, lib, ip).is_zsp());
  CHECK_THROWS(OrientationLibrary({}));
}

TEST_CASE("index_stack: one failing probe out of 100 gives hit rate 0.99") {
  const auto gm = voronoi_phantom(ProbeGrid(10, 10), 3, 4);
  const PatternParams pp;
  const IndexingParams ip;
  const auto lib = build_library(gm.orientations(), pp, ip);
  auto stack = synth_stack(gm, SampleMask::full(gm.grid()), pp);
  stack.patterns[42] =
      Pattern(pp.height, pp.width, std::vector<double>(pp.height * pp.width, 0.0));
  const auto maps = index_stack(stack, lib, ip);
  CHECK(maps.zsp == std::vector<std::size_t>{42});
  CHECK(maps.hit_rate == doctest::Approx(0.99));
  CHECK(maps.ipf.is_zero_at(42));
  CHECK(maps.mask.is_zsp(42));
  CHECK(detect_zsp(maps.ipf, SampleMask::full(gm.grid())) == maps.zsp);
  CHECK(hit_rate(1, 100) == doctest::Approx(0.99));
}

TEST_CASE("noiseless stacks reproduce the IPF reference at several resolutions") {
  const auto gm = voronoi_phantom(ProbeGrid(24, 20), 6, 11);
  const PatternParams pp;
  const auto truth = phantom_maps(gm, pp.boundary_contrast);
  const auto stack = synth_stack(gm, SampleMask::full(gm.grid()), pp);
  for (std::size_t res : {30u, 40u, 50u}) {
    IndexingParams ip;
    ip.n_theta = ip.n_rho = res;
    const auto lib = build_library(gm.orientations(), pp, ip);
    const auto maps = index_stack(stack, lib, ip, 2);
    CHECK(maps.hit_rate == 1.0);
    CHECK(maps.ipf == truth.ipf);
  }
}

TEST_CASE("unsampled probes are zero; thread count does not change results") {
  const auto gm = voronoi_phantom(ProbeGrid(20, 20), 4, 2);
  const PatternParams pp;
  const IndexingParams ip;
  const auto lib = build_library(gm.orientations(), pp, ip);
  const auto mask = uds_mask(gm.grid(), 0.3, 6);
  const auto stack = synth_stack(gm, mask, pp);
  const auto a = index_stack(stack, lib, ip, 1);
  const auto b = index_stack(stack, lib, ip, 3);
  CHECK(a.ipf == b.ipf);
  CHECK(a.band_contrast == b.band_contrast);
  for (std::size_t i = 0; i < gm.grid().count(); ++i) {
    if (!mask.is_sampled(i)) {
      CHECK(a.band_contrast[i] == 0.0);
      CHECK(a.ipf.is_zero_at(i));
    }
  }
}

}
