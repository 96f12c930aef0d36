#pragma once

// Toy Hough-based indexer: pattern -> (band contrast, orientation) or a zero-solution pixel.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cebsd/map_core.hpp"
#include "cebsd/phantom.hpp"

namespace cebsd {

/// Line-parameter accumulator. Bin (t, r) collects lines with angle theta_t = t * pi / n_theta
/// whose offset from the detector centre falls in [-rho_max + r * d, -rho_max + (r + 1) * d),
/// d = 2 rho_max / n_rho, rho_max the half diagonal of the detector.
struct HoughAccumulator {
  std::size_t n_theta = 0;
  std::size_t n_rho = 0;
  double rho_max = 0.0;
  std::vector<double> bins;  // theta-major: bins[t * n_rho + r]
  /// Optional per-bin validity; empty means every bin takes part in peak search.
  std::vector<unsigned char> valid;

  double at(std::size_t t, std::size_t r) const { return bins[t * n_rho + r]; }
  bool is_valid(std::size_t flat) const { return valid.empty() || valid[flat] != 0; }
  double theta_of(std::size_t t) const;
  double rho_of(std::size_t r) const;  // bin centre
  double rho_step() const { return 2.0 * rho_max / static_cast<double>(n_rho); }
};

/// Every pixel votes its intensity once per theta bin, so the accumulator mass equals
/// n_theta * sum(intensities). Requires n_theta, n_rho >= 8.
HoughAccumulator hough_transform(const Pattern& pattern, std::size_t n_theta, std::size_t n_rho);

struct Band {
  double theta = 0.0;
  double rho = 0.0;
  std::size_t theta_bin = 0;
  std::size_t rho_bin = 0;
  double prominence = 0.0;
};

struct BandDetectionParams {
  std::size_t max_bands = 11;
  double min_prominence = 4.0;
  /// Half-size of the neighbourhood cleared around each accepted peak, in bins.
  std::size_t suppress_theta = 2;
  std::size_t suppress_rho = 2;
};

/// Greedy peak picking. Prominence is (peak - median) / std over the valid bins, both taken
/// from the accumulator before any suppression. Neighbourhoods wrap in theta (theta + pi is
/// the same line with rho negated).
std::vector<Band> detect_bands(const HoughAccumulator& acc, const BandDetectionParams& params);
std::vector<Band> detect_bands(const HoughAccumulator& acc, std::size_t max_bands,
                               double min_prominence);

/// Mean intensity of pixels within half_width of any band line minus the mean of the rest,
/// clamped at 0. No bands (or no remaining pixels) gives 0.
double band_contrast(const Pattern& pattern, std::span<const Band> bands, double half_width);
double band_contrast(const Pattern& pattern, std::span<const BandLine> lines, double half_width);

struct IndexingParams {
  std::size_t n_theta = 40;
  std::size_t n_rho = 40;
  BandDetectionParams detection;
  std::size_t min_bands_required = 3;
  double band_half_width = 1.5;
  /// Bins whose line crosses fewer than this fraction of min(H_d, W_d) pixels are ignored.
  double min_line_fraction = 0.5;
  /// Cost, in bins, of a detected or library band left unmatched.
  double gap_penalty = 4.0;
  /// A detected band supports a library entry when some band of the entry lies within this
  /// L1 distance in (theta, rho) bins. The best entry needs min_bands_required supporters.
  double match_tolerance = 2.0;
};

/// Background-normalised accumulator used for band detection: the transform of the
/// mean-subtracted pattern divided by the number of pixels on each line, so each bin holds
/// the mean excess intensity along its line. Short lines are marked invalid.
HoughAccumulator line_mean_transform(const Pattern& pattern, const IndexingParams& params);

struct LibraryEntry {
  Orientation orientation;
  std::vector<Band> signature;  // sorted by theta
};

class OrientationLibrary {
 public:
  explicit OrientationLibrary(std::vector<LibraryEntry> entries);

  std::span<const LibraryEntry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::vector<LibraryEntry> entries_;
};

/// Signatures are detected from noiseless patterns rendered with `pattern_params`.
OrientationLibrary build_library(std::span<const Orientation> orientations,
                                 const PatternParams& pattern_params,
                                 const IndexingParams& params);

/// Sum of absolute (theta, rho) bin differences under the best order-preserving cyclic
/// alignment of the two theta-sorted band lists, plus gap_penalty per unmatched band.
double signature_distance(std::span<const Band> detected, std::span<const Band> reference,
                          const IndexingParams& params);

/// Number of detected bands with a reference band within params.match_tolerance bins
/// (theta wraps with rho negated).
std::size_t supporting_bands(std::span<const Band> detected, std::span<const Band> reference,
                             const IndexingParams& params);

struct IndexingResult {
  double band_contrast = 0.0;
  std::optional<Orientation> orientation;  // empty for a zero-solution pixel
  std::optional<std::size_t> library_index;
  std::size_t n_bands_found = 0;
  double match_distance = 0.0;

  bool is_zsp() const noexcept { return !orientation.has_value(); }
};

IndexingResult index_pattern(const Pattern& pattern, const OrientationLibrary& library,
                             const IndexingParams& params);

struct IndexedMaps {
  ScalarMap band_contrast;
  RgbMap ipf;
  SampleMask mask;  // Omega minus the zero-solution pixels, which are recorded on it
  std::vector<std::size_t> zsp;
  double hit_rate = 1.0;          // 1 - |zsp| / N_p
  double hit_rate_sampled = 1.0;  // 1 - |zsp| / |Omega|
};

/// Pattern for the i-th sampled probe (position i in ascending Omega order, probe index l).
using PatternSource = std::function<Pattern(std::size_t position, std::size_t probe)>;

/// Indexes every sampled probe; unsampled probes are 0 in both maps, zero-solution pixels are
/// 0 in the IPF map and keep their band contrast.
IndexedMaps index_probes(const SampleMask& mask, const PatternSource& source,
                         const OrientationLibrary& library, const IndexingParams& params,
                         std::size_t threads = 1);

IndexedMaps index_stack(const PatternStack& stack, const OrientationLibrary& library,
                        const IndexingParams& params, std::size_t threads = 1);

}  // namespace cebsd
