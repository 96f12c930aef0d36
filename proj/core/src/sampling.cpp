#include "cebsd/sampling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cebsd/random.hpp"

namespace cebsd {

std::string to_string(SamplingStrategy s) {
  return s == SamplingStrategy::uds ? "uds" : "linehop";
}

SamplingStrategy parse_sampling_strategy(const std::string& name) {
  if (name == "uds") return SamplingStrategy::uds;
  if (name == "linehop") return SamplingStrategy::linehop;
  throw std::invalid_argument("unknown sampling strategy '" + name + "'");
}

std::size_t target_sample_count(const ProbeGrid& grid, double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("sampling rate must lie in (0, 1], got " + std::to_string(rate));
  }
  const auto m = static_cast<std::size_t>(std::floor(rate * static_cast<double>(grid.count())));
  return std::max<std::size_t>(1, m);
}

SampleMask uds_mask(ProbeGrid grid, double rate, std::uint64_t seed) {
  const std::size_t m = target_sample_count(grid, rate);
  if (m == grid.count()) return SampleMask::full(grid);

  // partial Fisher-Yates over the index range
  std::vector<std::size_t> pool(grid.count());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x0d5);
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  return SampleMask(grid, std::move(pool));
}

std::vector<LinehopSample> linehop_plan(ProbeGrid grid, double rate, std::uint64_t seed) {
  const std::size_t m = target_sample_count(grid, rate);
  const std::size_t n = grid.count();
  std::vector<LinehopSample> plan;
  plan.reserve(m);
  if (m == n) {
    for (std::size_t l = 0; l < n; ++l) plan.push_back({l, l});
    return plan;
  }

  std::vector<bool> taken(n, false);
  Rng rng = make_rng(seed, 0x11e);
  std::uniform_int_distribution<int> offset_pick(0, 2);
  const auto height = static_cast<long long>(grid.height());
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t tpl = static_cast<std::size_t>(
        (static_cast<unsigned long long>(k) * n) / static_cast<unsigned long long>(m));
    const auto [row, col] = grid.coords_of(tpl);
    std::array<int, 3> order{-1, 0, 1};
    std::swap(order[0], order[static_cast<std::size_t>(offset_pick(rng))]);
    if (rng() & 1u) std::swap(order[1], order[2]);
    for (int off : order) {
      const long long r = std::clamp(static_cast<long long>(row) + off, 0LL, height - 1);
      const std::size_t l = grid.index_of(static_cast<std::size_t>(r), col);
      if (!taken[l]) {
        taken[l] = true;
        plan.push_back({tpl, l});
        break;
      }
    }
  }
  return plan;
}

SampleMask linehop_mask(ProbeGrid grid, double rate, std::uint64_t seed) {
  const auto plan = linehop_plan(grid, rate, seed);
  std::vector<std::size_t> sampled;
  sampled.reserve(plan.size());
  for (const auto& s : plan) sampled.push_back(s.sampled_index);
  return SampleMask(grid, std::move(sampled));
}

SampleMask make_mask(SamplingStrategy strategy, ProbeGrid grid, double rate, std::uint64_t seed) {
  return strategy == SamplingStrategy::uds ? uds_mask(grid, rate, seed)
                                           : linehop_mask(grid, rate, seed);
}

template <std::size_t C>
ChannelMap<C> apply_mask(const ChannelMap<C>& map, const SampleMask& mask) {
  if (!(map.grid() == mask.grid())) {
    throw ShapeError("apply_mask: map grid " + to_string(map.grid()) + " vs mask grid " +
                     to_string(mask.grid()));
  }
  std::array<std::vector<double>, C> out;
  for (std::size_t c = 0; c < C; ++c) {
    out[c].assign(map.size(), 0.0);
    const auto src = map.channel(c);
    for (std::size_t l : mask.sampled()) out[c][l] = src[l];
  }
  return ChannelMap<C>(map.grid(), std::move(out));
}

SampleMask merge_zsp(const SampleMask& mask, std::span<const std::size_t> zsp) {
  std::vector<std::size_t> all_zsp(mask.zsp().begin(), mask.zsp().end());
  std::vector<bool> drop(mask.grid().count(), false);
  for (std::size_t l : zsp) {
    if (!mask.grid().contains(l)) {
      throw std::invalid_argument("merge_zsp: index " + std::to_string(l) + " outside grid");
    }
    drop[l] = true;
    all_zsp.push_back(l);
  }
  std::vector<std::size_t> kept;
  kept.reserve(mask.sampled_count());
  for (std::size_t l : mask.sampled()) {
    if (!drop[l]) kept.push_back(l);
  }
  return SampleMask(mask.grid(), std::move(kept), std::move(all_zsp));
}

template <std::size_t C>
std::vector<std::size_t> detect_zsp(const ChannelMap<C>& map, const SampleMask& mask) {
  if (!(map.grid() == mask.grid())) throw ShapeError("detect_zsp: grid mismatch");
  std::vector<std::size_t> out;
  for (std::size_t l : mask.sampled()) {
    if (map.is_zero_at(l)) out.push_back(l);
  }
  return out;
}

double effective_rate(const SampleMask& mask) {
  return static_cast<double>(mask.sampled_count()) / static_cast<double>(mask.grid().count());
}

template ScalarMap apply_mask<1>(const ScalarMap&, const SampleMask&);
template RgbMap apply_mask<3>(const RgbMap&, const SampleMask&);
template std::vector<std::size_t> detect_zsp<1>(const ScalarMap&, const SampleMask&);
template std::vector<std::size_t> detect_zsp<3>(const RgbMap&, const SampleMask&);

}  // namespace cebsd
