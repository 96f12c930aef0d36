#pragma once

// End-to-end experiments: phantom -> patterns -> noise -> indexing -> masks -> inpainting ->
// metrics, with CSV rows and map files as output.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cebsd/bpfa.hpp"
#include "cebsd/indexing.hpp"
#include "cebsd/metrics.hpp"
#include "cebsd/noise.hpp"
#include "cebsd/phantom.hpp"
#include "cebsd/sampling.hpp"

namespace cebsd {

struct PhantomConfig {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t grains = 8;
  std::uint64_t seed = 7;
  PatternParams pattern;
};

struct ExperimentConfig {
  PhantomConfig phantom;
  IndexingParams indexing;
  std::vector<NoiseKind> noise_kinds{NoiseKind::gaussian, NoiseKind::poisson};
  std::vector<double> snrs_db{-5.0, 5.0};
  /// Adds one noiseless arm per seed.
  bool include_noiseless = true;
  SamplingStrategy strategy = SamplingStrategy::uds;
  std::vector<double> rates{0.01, 0.05, 0.10, 0.15, 0.20, 0.25};
  std::vector<MapKind> map_kinds{MapKind::band_contrast, MapKind::ipf};
  bool zsp_correction_bc = false;
  bool zsp_correction_ipf = true;
  BpfaParams bpfa;
  SsimParams ssim;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t threads = 1;
  /// Empty: nothing is written.
  std::filesystem::path output_dir;
  bool write_maps = true;

  /// Throws std::invalid_argument on rates outside (0, 1], no seeds, or no map kinds.
  void validate() const;
};

/// Unknown keys are rejected; missing keys keep their defaults.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);

struct ResultRow {
  std::string experiment;
  std::uint64_t seed = 0;
  NoiseKind noise = NoiseKind::none;
  std::optional<double> target_snr_db;    // absent for noiseless arms
  std::optional<double> measured_snr_db;  // absent for noiseless arms
  double rate = 1.0;
  double effective_rate = 1.0;
  MapKind map = MapKind::ipf;
  bool zsp_correction = false;
  double hit_rate = 1.0;          // 1 - |zsp| / N_p
  double hit_rate_sampled = 1.0;  // 1 - |zsp| / |Omega|
  double normalized_error = 0.0;
  double ssim = 1.0;
  double wall_time_s = 0.0;
};

/// Column order of the CSV files.
std::string csv_header();
/// Numbers are printed with 10 significant digits; noiseless SNR cells are empty.
std::string csv_line(const ResultRow& row, bool include_timing = true);
std::string to_csv(const std::vector<ResultRow>& rows, bool include_timing = true);

/// Fixed ground truth shared by every arm of an experiment.
struct Scene {
  GrainMap grains;
  std::vector<bool> boundaries;
  PhantomMaps truth;
  OrientationLibrary library;  // built from the grain orientations
  /// Band-contrast reference: the noiseless, fully sampled stack indexed.
  ScalarMap bc_reference;
  RgbMap ipf_reference;
};

Scene make_scene(const ExperimentConfig& config);

/// One noise realisation of the acquisition: patterns for the probes of `mask` are rendered,
/// corrupted with stream seed ^ probe and indexed. Poisson counts are divided by the gain
/// sigma_psn / ||y||_1 so every pattern stays on the intensity scale.
struct AcquiredArm {
  IndexedMaps maps;
  std::optional<double> measured_snr_db;  // mean over probes
};

AcquiredArm acquire(const Scene& scene, const ExperimentConfig& config, const SampleMask& mask,
                    const NoiseSpec& noise);

/// Restriction of a fully sampled acquisition to `mask`. Identical to acquiring `mask`
/// directly, since every probe's pattern and noise stream depend only on its index.
IndexedMaps restrict_to(const IndexedMaps& full, const SampleMask& mask);

struct ZspOutcome {
  RgbMap corrected;
  RgbMap uncorrected;
  SampleMask corrected_mask;
  std::vector<std::size_t> zsp;
};

/// Both arms of the correction study on an indexed IPF map: zero-valued sampled pixels are
/// found, then the map is inpainted once with them moved to the unsampled set and once as is.
ZspOutcome correct_zsp(const RgbMap& indexed, const SampleMask& mask,
                       const InpaintOptions& options);

InpaintOptions inpaint_options(const ExperimentConfig& config, double rate, MapKind kind,
                               std::uint64_t seed);

std::vector<ResultRow> run_indexing_robustness(const ExperimentConfig& config);
std::vector<ResultRow> run_zsp_correction(const ExperimentConfig& config);
std::vector<ResultRow> run_subsampling_sweep(const ExperimentConfig& config);

}  // namespace cebsd
