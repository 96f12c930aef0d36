#pragma once

// Probe subsampling masks, the mask operator P_Omega, and zero-solution pixel bookkeeping.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cebsd/map_core.hpp"

namespace cebsd {

enum class SamplingStrategy { uds, linehop };

std::string to_string(SamplingStrategy s);
SamplingStrategy parse_sampling_strategy(const std::string& name);

/// max(1, floor(rate * N_p)); throws unless 0 < rate <= 1.
std::size_t target_sample_count(const ProbeGrid& grid, double rate);

/// Uniform density sampling: target_sample_count positions drawn without replacement.
SampleMask uds_mask(ProbeGrid grid, double rate, std::uint64_t seed);

/// One linehop sample: the evenly spaced template position it came from and where it landed.
struct LinehopSample {
  std::size_t template_index;
  std::size_t sampled_index;
};

/// Template positions are evenly spaced along the raster trajectory,
/// floor(k * N_p / M) for k < M. Each is moved to the row above, the same row or the row
/// below (same column, uniformly at random, clamped to the grid). A position already taken
/// tries the remaining offsets; if all are taken the sample is dropped.
std::vector<LinehopSample> linehop_plan(ProbeGrid grid, double rate, std::uint64_t seed);
SampleMask linehop_mask(ProbeGrid grid, double rate, std::uint64_t seed);

SampleMask make_mask(SamplingStrategy strategy, ProbeGrid grid, double rate, std::uint64_t seed);

/// P_Omega: sampled pixels copied, every other pixel exactly 0 in all channels.
template <std::size_t C>
ChannelMap<C> apply_mask(const ChannelMap<C>& map, const SampleMask& mask);

/// Omega' = Omega \ zsp, recording zsp (merged with any zsp already on the mask).
SampleMask merge_zsp(const SampleMask& mask, std::span<const std::size_t> zsp);

/// Sampled indices whose value is exactly 0 in every channel.
template <std::size_t C>
std::vector<std::size_t> detect_zsp(const ChannelMap<C>& map, const SampleMask& mask);

/// |Omega| / N_p.
double effective_rate(const SampleMask& mask);

}  // namespace cebsd
