#pragma once

// Synthetic ground truth: Voronoi grain maps, their band-contrast / IPF reference maps,
// and a toy Kikuchi-pattern renderer standing in for the microscope.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cebsd/map_core.hpp"

namespace cebsd {

/// Per-grain triple in [0, 1]. Doubles as the IPF colour and as the pattern parameter.
using Orientation = std::array<double, 3>;

class GrainMap {
 public:
  GrainMap(ProbeGrid grid, std::vector<std::uint32_t> labels,
           std::vector<Orientation> orientations);

  const ProbeGrid& grid() const noexcept { return grid_; }
  std::span<const std::uint32_t> labels() const noexcept { return labels_; }
  std::span<const Orientation> orientations() const noexcept { return orientations_; }
  std::size_t grain_count() const noexcept { return orientations_.size(); }

  std::uint32_t label(std::size_t index) const { return labels_.at(index); }
  const Orientation& orientation_at(std::size_t index) const {
    return orientations_[labels_.at(index)];
  }

  friend bool operator==(const GrainMap&, const GrainMap&) = default;

 private:
  ProbeGrid grid_;
  std::vector<std::uint32_t> labels_;
  std::vector<Orientation> orientations_;
};

/// Labels every pixel with its nearest site (squared Euclidean distance on pixel centres,
/// ties to the lower site index). Sites and orientations are given explicitly.
GrainMap voronoi_phantom(ProbeGrid grid, std::span<const PixelCoord> sites,
                         std::vector<Orientation> orientations);

/// Seeded variant: sites are n_grains distinct pixel positions drawn uniformly, orientation
/// components are uniform in [0.15, 0.95] so no grain colour is black.
GrainMap voronoi_phantom(ProbeGrid grid, std::size_t n_grains, std::uint64_t seed);

/// Pixels with at least one 4-neighbour in a different grain.
std::vector<bool> boundary_flags(const GrainMap& gm);

struct PhantomMaps {
  ScalarMap band_contrast;
  RgbMap ipf;
};

/// Band contrast is 1 in grain interiors and `boundary_contrast` on boundary pixels;
/// the IPF map colours each pixel by its grain orientation.
PhantomMaps phantom_maps(const GrainMap& gm, double boundary_contrast);

/// One detector image, H_d x W_d, row-major. Rendered patterns are non-negative; after
/// Gaussian readout noise individual intensities can be negative, so only finiteness is checked.
class Pattern {
 public:
  Pattern(std::size_t height, std::size_t width, std::vector<double> intensities);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return intensities_.size(); }
  std::span<const double> intensities() const noexcept { return intensities_; }
  double operator()(std::size_t row, std::size_t col) const {
    return intensities_[row * width_ + col];
  }

  friend bool operator==(const Pattern&, const Pattern&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> intensities_;
};

struct PatternParams {
  std::size_t height = 64;
  std::size_t width = 48;
  std::size_t n_bands = 6;
  double band_width = 3.0;
  double amplitude = 3.0;
  /// Band amplitude multiplier on grain-boundary probes (the sensing operator maps the
  /// band-contrast reference value of a probe to the strength of its bands).
  double boundary_contrast = 0.5;
};

/// Straight line of a Kikuchi band in detector coordinates: points (x, y) measured from the
/// detector centre with x * cos(theta) + y * sin(theta) = rho, theta in [0, pi).
struct BandLine {
  double theta = 0.0;
  double rho = 0.0;
};

/// Band geometry for an orientation (o0, o1, o2), for j = 0 .. n_bands - 1:
///   theta_j = pi * frac(o0 + j / n_bands)
///   rho_j   = 0.3 * min(H_d, W_d) * sin(2 pi (o1 + (j + 1) * (0.25 + 0.5 * o2)))
std::vector<BandLine> band_lines(const Orientation& orientation, std::size_t height,
                                 std::size_t width, std::size_t n_bands);

/// Background 1.0 plus `amplitude` on every pixel centre within band_width / 2 of a band line.
Pattern synth_pattern(const Orientation& orientation, std::size_t height, std::size_t width,
                      std::size_t n_bands, double band_width, double amplitude);

/// Pattern for probe `index` of the grain map: its grain's orientation with amplitude scaled
/// by boundary_contrast on boundary probes.
Pattern synth_probe_pattern(const GrainMap& gm, const std::vector<bool>& boundaries,
                            std::size_t index, const PatternParams& params);

/// Patterns for the sampled probes of `mask`, in ascending probe-index order.
struct PatternStack {
  SampleMask mask;
  std::size_t pattern_height = 0;
  std::size_t pattern_width = 0;
  std::vector<Pattern> patterns;

  const ProbeGrid& grid() const noexcept { return mask.grid(); }
};

PatternStack synth_stack(const GrainMap& gm, const SampleMask& mask, const PatternParams& params,
                         std::size_t threads = 1);

}  // namespace cebsd
