#pragma once

// Probe grids, EBSD maps and sampling masks shared by every stage of the pipeline.
//
// Maps are stored planar (one vector per channel), row-major over the probe grid.
// Values stay real-valued everywhere in memory; quantization happens only in io.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cebsd {

/// Thrown when two objects that must share a shape (grid, length, geometry) do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PixelCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// H_p x W_p raster of probe positions. Linear index l <-> (l / W_p, l % W_p).
class ProbeGrid {
 public:
  ProbeGrid(std::size_t height, std::size_t width) : height_(height), width_(width) {
    if (height == 0 || width == 0) {
      throw std::invalid_argument("ProbeGrid: height and width must be >= 1");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t count() const noexcept { return height_ * width_; }

  PixelCoord coords_of(std::size_t index) const noexcept {
    return {index / width_, index % width_};
  }
  std::size_t index_of(std::size_t row, std::size_t col) const noexcept {
    return row * width_ + col;
  }
  std::size_t index_of(PixelCoord c) const noexcept { return index_of(c.row, c.col); }
  bool contains(std::size_t index) const noexcept { return index < count(); }

  friend bool operator==(const ProbeGrid&, const ProbeGrid&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
};

std::string to_string(const ProbeGrid& grid);

/// A C-channel map over a probe grid. C = 1 is a band-contrast map, C = 3 an IPF (RGB) map.
/// RGB maps are additionally constrained to [0, 1].
template <std::size_t C>
class ChannelMap {
  static_assert(C >= 1);

 public:
  static constexpr std::size_t kChannels = C;

  /// All-zero map.
  explicit ChannelMap(ProbeGrid grid) : grid_(grid) {
    for (auto& ch : channels_) ch.assign(grid_.count(), 0.0);
  }

  ChannelMap(ProbeGrid grid, std::array<std::vector<double>, C> channels)
      : grid_(grid), channels_(std::move(channels)) {
    for (std::size_t c = 0; c < C; ++c) {
      if (channels_[c].size() != grid_.count()) {
        throw ShapeError("ChannelMap: channel " + std::to_string(c) + " has " +
                         std::to_string(channels_[c].size()) + " values, grid " +
                         to_string(grid_) + " needs " + std::to_string(grid_.count()));
      }
      for (double v : channels_[c]) check_value(v);
    }
  }

  /// Single-channel convenience constructor.
  ChannelMap(ProbeGrid grid, std::vector<double> values)
    requires(C == 1)
      : ChannelMap(grid, std::array<std::vector<double>, 1>{std::move(values)}) {}

  const ProbeGrid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return grid_.count(); }

  std::span<const double> channel(std::size_t c) const { return channels_.at(c); }
  std::span<const double> values() const
    requires(C == 1)
  {
    return channels_[0];
  }

  double at(std::size_t c, std::size_t index) const { return channels_.at(c).at(index); }
  double operator()(std::size_t c, std::size_t row, std::size_t col) const {
    return channels_[c][grid_.index_of(row, col)];
  }
  double operator[](std::size_t index) const
    requires(C == 1)
  {
    return channels_[0][index];
  }

  void set(std::size_t c, std::size_t index, double v) {
    check_value(v);
    channels_.at(c).at(index) = v;
  }

  /// True when every channel at `index` is exactly zero.
  bool is_zero_at(std::size_t index) const {
    for (const auto& ch : channels_) {
      if (ch[index] != 0.0) return false;
    }
    return true;
  }

  friend bool operator==(const ChannelMap&, const ChannelMap&) = default;

 private:
  static void check_value(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("ChannelMap: non-finite value");
    if constexpr (C == 3) {
      if (v < 0.0 || v > 1.0) throw std::invalid_argument("RgbMap: value outside [0, 1]");
    }
  }

  ProbeGrid grid_;
  std::array<std::vector<double>, C> channels_;
};

using ScalarMap = ChannelMap<1>;
using RgbMap = ChannelMap<3>;

/// Sampled probe set Omega plus the zero-solution pixel set Omega_zsp.
/// Both are kept sorted and unique; they are disjoint.
class SampleMask {
 public:
  SampleMask(ProbeGrid grid, std::vector<std::size_t> sampled, std::vector<std::size_t> zsp = {});

  static SampleMask full(ProbeGrid grid);

  const ProbeGrid& grid() const noexcept { return grid_; }
  std::span<const std::size_t> sampled() const noexcept { return sampled_; }
  std::span<const std::size_t> zsp() const noexcept { return zsp_; }
  std::size_t sampled_count() const noexcept { return sampled_.size(); }

  bool is_sampled(std::size_t index) const { return flags_.at(index) == kSampled; }
  bool is_zsp(std::size_t index) const { return flags_.at(index) == kZsp; }

  friend bool operator==(const SampleMask& a, const SampleMask& b) {
    return a.grid_ == b.grid_ && a.sampled_ == b.sampled_ && a.zsp_ == b.zsp_;
  }

 private:
  static constexpr unsigned char kUnsampled = 0;
  static constexpr unsigned char kSampled = 1;
  static constexpr unsigned char kZsp = 2;

  ProbeGrid grid_;
  std::vector<std::size_t> sampled_;
  std::vector<std::size_t> zsp_;
  std::vector<unsigned char> flags_;
};

/// Affine map [source_min, source_max] -> [target_lo, target_hi] remembered for inversion.
struct NormalizationRecord {
  double source_min = 0.0;
  double source_max = 0.0;
  double target_lo = 0.0;
  double target_hi = 1.0;
  bool degenerate = false;  // constant input; inversion restores source_min everywhere
  std::size_t length = 0;

  friend bool operator==(const NormalizationRecord&, const NormalizationRecord&) = default;
};

struct NormalizedMap {
  ScalarMap map;
  NormalizationRecord record;
};

NormalizedMap normalize_map(const ScalarMap& map, double target_lo, double target_hi);
ScalarMap denormalize_map(const ScalarMap& map, const NormalizationRecord& record);

}  // namespace cebsd
