#pragma once

// Map quality criteria: normalised l2 error, hit rate and SSIM.

#include <cstddef>
#include <optional>

#include "cebsd/map_core.hpp"

namespace cebsd {

/// ||ref - est|| / ||ref|| over all channels jointly.
template <std::size_t C>
double normalized_error(const ChannelMap<C>& ref, const ChannelMap<C>& est);

/// 1 - zsp_count / N_p.
double hit_rate(std::size_t zsp_count, std::size_t n_probes);

enum class SsimWindow { uniform, gaussian };

struct SsimParams {
  std::size_t window = 8;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Dynamic range L. Unset: max(ref) - min(ref) over all channels, or 1 if ref is constant.
  std::optional<double> dynamic_range;
  SsimWindow kind = SsimWindow::uniform;
  double gaussian_sigma = 1.5;  // only for SsimWindow::gaussian
};

/// Mean local SSIM over every valid window position (no padding). Local statistics use
/// population (1/n) moments. Multi-channel maps average the per-channel SSIM.
template <std::size_t C>
double ssim(const ChannelMap<C>& ref, const ChannelMap<C>& est, const SsimParams& params = {});

/// Dynamic range used when SsimParams::dynamic_range is unset.
template <std::size_t C>
double data_range(const ChannelMap<C>& ref);

}  // namespace cebsd
