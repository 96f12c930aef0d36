#include <cmath>
#include <random>
#include <cstring>
#include <set>

#include "doctest.h"

#include "cebsd/sampling.hpp"

using namespace cebsd;

namespace {

std::vector<std::size_t> as_vec(std::span<const std::size_t> s) { return {s.begin(), s.end()}; }

ScalarMap random_map(ProbeGrid g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.001, 10.0);
  std::vector<double> v(g.count());
  for (auto& x : v) x = u(rng);
  return ScalarMap(g, std::move(v));
}

}  // namespace

TEST_SUITE("sampling") {

TEST_CASE("uds: full rate, counts, validation") {
  const ProbeGrid g(12, 9);
  CHECK(uds_mask(g, 1.0, 3) == SampleMask::full(g));
  CHECK(uds_mask(ProbeGrid(512, 416), 0.10, 1).sampled_count() == 21299);
  CHECK(uds_mask(g, 1e-6, 1).sampled_count() == 1);
  CHECK_THROWS_AS(uds_mask(g, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(uds_mask(g, 1.01, 1), std::invalid_argument);
  CHECK(uds_mask(g, 0.3, 8) == uds_mask(g, 0.3, 8));
  CHECK(uds_mask(g, 0.3, 8).zsp().empty());
}

TEST_CASE("uds: 100 seeds on 128x128 at 10% give 100 distinct masks") {
  std::set<std::vector<std::size_t>> seen;
  for (std::uint64_t s = 0; s < 100; ++s) {
    seen.insert(as_vec(uds_mask(ProbeGrid(128, 128), 0.1, s).sampled()));
  }
  CHECK(seen.size() == 100);
}

TEST_CASE("uds: per-pixel inclusion frequency is uniform") {
  const ProbeGrid g(16, 16);
  const int trials = 10000;
  std::vector<int> hits(g.count(), 0);
  for (int t = 0; t < trials; ++t) {
    const auto m = uds_mask(g, 0.25, static_cast<std::uint64_t>(t));
    for (auto i : m.sampled()) ++hits[i];
  }
  const double se = std::sqrt(0.25 * 0.75 / trials);
  for (int h : hits) CHECK(std::abs(h / double(trials) - 0.25) <= 5 * se);
}

TEST_CASE("linehop: full rate and template adjacency") {
  const ProbeGrid g(128, 128);
  CHECK(linehop_mask(g, 1.0, 2) == SampleMask::full(g));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto plan = linehop_plan(g, 0.1, seed);
    for (const auto& s : plan) {
      const auto t = g.coords_of(s.template_index);
      const auto q = g.coords_of(s.sampled_index);
      CHECK(q.col == t.col);
      CHECK(std::abs(static_cast<long>(q.row) - static_cast<long>(t.row)) <= 1);
    }
    const auto m = linehop_mask(g, 0.1, seed);
    CHECK(m.sampled_count() >= 1638 - 128);
    CHECK(m.sampled_count() <= 1638 + 128);
  }
  CHECK(parse_sampling_strategy("linehop") == SamplingStrategy::linehop);
  CHECK_THROWS_AS(linehop_mask(g, -0.5, 1), std::invalid_argument);
}

TEST_CASE("apply_mask worked example and edge cases") {
  const ProbeGrid g(1, 4);
  const ScalarMap m(g, std::vector<double>{1, 2, 3, 4});
  const auto out = apply_mask(m, SampleMask(g, {0, 2}));
  CHECK(std::vector<double>(out.values().begin(), out.values().end()) ==
        std::vector<double>{1, 0, 3, 0});
  CHECK(apply_mask(m, SampleMask::full(g)) == m);
  const auto none = merge_zsp(SampleMask::full(g), std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(apply_mask(m, none) == ScalarMap(g));
  CHECK_THROWS_AS(apply_mask(m, SampleMask::full(ProbeGrid(2, 2))), ShapeError);
}

TEST_CASE("apply_mask preserves bits on random pairs and is idempotent") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const ProbeGrid g(3 + rng() % 20, 3 + rng() % 20);
    const auto m = random_map(g, rng);
    const auto mask = uds_mask(g, 0.05 + 0.9 * (rng() % 100) / 100.0, rng());
    const auto out = apply_mask(m, mask);
    for (std::size_t i = 0; i < g.count(); ++i) {
      if (mask.is_sampled(i)) {
        CHECK(std::memcmp(&out.values()[i], &m.values()[i], sizeof(double)) == 0);
      } else {
        CHECK(out[i] == 0.0);
      }
    }
    CHECK(apply_mask(out, mask) == out);
  }
}

TEST_CASE("merge_zsp removes, records and never adds") {
  const ProbeGrid g(2, 10);
  std::vector<std::size_t> first10(10);
  for (std::size_t i = 0; i < 10; ++i) first10[i] = i;
  const SampleMask m(g, first10);
  CHECK(merge_zsp(m, {}) == m);
  const auto merged = merge_zsp(m, std::vector<std::size_t>{5});
  CHECK(as_vec(merged.sampled()) == std::vector<std::size_t>{0, 1, 2, 3, 4, 6, 7, 8, 9});
  CHECK(as_vec(merged.zsp()) == std::vector<std::size_t>{5});
  const auto disjoint = merge_zsp(m, std::vector<std::size_t>{15});
  CHECK(as_vec(disjoint.sampled()) == first10);
  CHECK(as_vec(disjoint.zsp()) == std::vector<std::size_t>{15});
  const auto twice = merge_zsp(merged, std::vector<std::size_t>{2});
  CHECK(as_vec(twice.zsp()) == std::vector<std::size_t>{2, 5});
  CHECK_THROWS(merge_zsp(m, std::vector<std::size_t>{20}));
}

TEST_CASE("detect_zsp finds exactly the planted zeros") {
  const ProbeGrid g(1, 3);
  CHECK(detect_zsp(ScalarMap(g, std::vector<double>{1, 2, 3}), SampleMask::full(g)).empty());
  RgbMap rgb(g, {std::vector<double>{0.2, 0.0, 0.0}, std::vector<double>{0.2, 0.0, 0.1},
                 std::vector<double>{0.2, 0.0, 0.0}});
  CHECK(detect_zsp(rgb, SampleMask::full(g)) == std::vector<std::size_t>{1});
  CHECK(detect_zsp(rgb, SampleMask(g, {0, 2})).empty());

  std::mt19937_64 rng(17);
  for (int t = 0; t < 20; ++t) {
    const ProbeGrid big(30, 30);
    auto v = random_map(big, rng);
    std::vector<double> vals(v.values().begin(), v.values().end());
    const auto mask = uds_mask(big, 0.4, rng());
    std::set<std::size_t> planted;
    const auto s = mask.sampled();
    for (int k = 0; k < 25; ++k) planted.insert(s[rng() % s.size()]);
    for (auto i : planted) vals[i] = 0.0;
    vals[0] = mask.is_sampled(0) ? vals[0] : 0.0;  // zero off Omega is not a ZSP
    const auto found = detect_zsp(ScalarMap(big, vals), mask);
    CHECK(found == std::vector<std::size_t>(planted.begin(), planted.end()));
  }
}

TEST_CASE("effective rate") {
  const ProbeGrid g(4, 5);
  CHECK(effective_rate(SampleMask::full(g)) == 1.0);
  const auto m = uds_mask(g, 0.5, 3);
  const auto s = m.sampled();
  const std::vector<std::size_t> zsp{s[0], s[1], (s[0] + 1) % 20};
  const auto merged = merge_zsp(m, zsp);
  const double hi = m.sampled_count() / 20.0;
  const double lo = (m.sampled_count() - 3.0) / 20.0;
  CHECK(effective_rate(merged) >= lo);
  CHECK(effective_rate(merged) <= hi);
  CHECK(21299.0 / 212992.0 == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(effective_rate(uds_mask(ProbeGrid(512, 416), 0.1, 1)) == 21299.0 / 212992.0);
}

}
