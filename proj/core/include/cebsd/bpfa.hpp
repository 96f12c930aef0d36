#pragma once

// Patch-based beta-process factor analysis (BPFA) inpainting with batched EM inference.
//
// Model, per overlapping patch p with observed elements Omega_p:
//   z_p = P_Omega_p(D alpha_p + n_p),   alpha_p = u_p (.) w_p
//   d_k ~ N(0, 1/gamma_d I),  w_p ~ N(0, 1/gamma_w I),  n_p ~ N(0, 1/gamma_n I)
//   u_pk ~ Bernoulli(pi_k),   pi_k ~ Beta(a/K, b(K-1)/K)
//
// Inference keeps a Gaussian factor q(w_pk) = N(mu_pk, v_pk) for every active weight and point
// estimates for everything else. Each EM iteration over a batch is a sequence of exact
// coordinate minimisations of the free energy F (constants dropped):
//
//   F = sum_p [ gamma_n/2 (||r_p||^2 + sum_k u_pk v_pk ||d_k|Omega_p||^2) - |Omega_p|/2 log gamma_n
//             + sum_k u_pk (gamma_w/2 (mu_pk^2 + v_pk) - 1/2 log(gamma_w v_pk) - 1/2)
//             - sum_k (u_pk log pi_k + (1 - u_pk) log(1 - pi_k)) ]
//     + gamma_d/2 ||D||^2 - sum_k (a/K log pi_k + b(K-1)/K log(1 - pi_k))
//     + sum_i (d_i^T P_i d_i / 2 - Q_i^T d_i)
//
// r_p is the observed residual z_p - D(u_p (.) mu_p) and d_i is row i of D. The last line
// carries sufficient statistics of earlier batches (online EM); memory_decay = 0 turns it off.
// The weight step sweeps atoms one at a time and then refits the active means jointly; the
// dictionary step solves for each row of D jointly. Between batches, atoms no patch uses are
// restarted from the residuals of the worst-fitted patches.
// Under these updates F never increases within a batch.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cebsd/map_core.hpp"

namespace cebsd {

enum class MapKind { band_contrast, ipf };

std::string to_string(MapKind kind);
MapKind parse_map_kind(const std::string& name);

struct PatchShape {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const PatchShape&, const PatchShape&) = default;
};

/// Patch shape per sampling rate and map kind, tabulated at 1, 5, 10, 15, 20 and 25 %.
/// Other rates use the nearest tabulated rate; ties go to the smaller rate (larger patch).
PatchShape select_patch_shape(double rate, MapKind kind);

/// Overlapping H_op x W_op windows over the probe grid, every top-left corner taken.
/// Element e of a patch vector is ((dr * W_op) + dc) * channels + ch, i.e. channels are
/// interleaved per pixel.
class PatchGeometry {
 public:
  PatchGeometry(ProbeGrid grid, PatchShape shape, std::size_t channels);

  const ProbeGrid& grid() const noexcept { return grid_; }
  const PatchShape& shape() const noexcept { return shape_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t patch_len() const noexcept { return shape_.height * shape_.width * channels_; }
  std::size_t patches_down() const noexcept { return grid_.height() - shape_.height + 1; }
  std::size_t patches_across() const noexcept { return grid_.width() - shape_.width + 1; }
  /// (H_p - H_op + 1) (W_p - W_op + 1)
  std::size_t n_patches() const noexcept { return patches_down() * patches_across(); }

  PixelCoord origin(std::size_t patch) const noexcept {
    return {patch / patches_across(), patch % patches_across()};
  }
  /// Probe index and channel of element e of patch p.
  std::size_t probe_of(std::size_t patch, std::size_t element) const noexcept;
  std::size_t channel_of(std::size_t element) const noexcept { return element % channels_; }

  friend bool operator==(const PatchGeometry&, const PatchGeometry&) = default;

 private:
  ProbeGrid grid_;
  PatchShape shape_;
  std::size_t channels_;
};

/// Observed entries of every patch in compressed-row form.
class PatchSet {
 public:
  PatchSet(PatchGeometry geometry, std::vector<std::size_t> offsets,
           std::vector<std::uint32_t> elements, std::vector<double> values);

  const PatchGeometry& geometry() const noexcept { return geometry_; }
  std::size_t size() const noexcept { return offsets_.size() - 1; }
  std::size_t observed_total() const noexcept { return elements_.size(); }
  std::size_t offset(std::size_t patch) const noexcept { return offsets_[patch]; }

  std::span<const std::uint32_t> observed(std::size_t patch) const {
    return {elements_.data() + offsets_[patch], offsets_[patch + 1] - offsets_[patch]};
  }
  std::span<const double> values(std::size_t patch) const {
    return {values_.data() + offsets_[patch], offsets_[patch + 1] - offsets_[patch]};
  }

 private:
  PatchGeometry geometry_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> elements_;
  std::vector<double> values_;
};

template <std::size_t C>
PatchSet extract_patches(const ChannelMap<C>& map, const SampleMask& mask,
                         const PatchGeometry& geometry);

enum class InitScheme {
  gaussian,     // d_k ~ N(0, 1/N_op)
  gaussian_dc,  // as gaussian, with the first C atoms replaced by unit per-channel constants
  dct,          // separable DCT-II atoms, lowest frequencies first, one channel each;
                //   atoms beyond the basis size are drawn as in gaussian
};

std::string to_string(InitScheme scheme);
InitScheme parse_init_scheme(const std::string& name);

struct BpfaParams {
  std::size_t atoms = 25;       // K
  std::size_t sparsity = 4;     // s
  std::size_t batch_size = 1024;
  std::size_t epochs = 1;
  std::size_t em_iters_per_batch = 3;
  std::uint64_t seed = 0;
  InitScheme init = InitScheme::dct;
  double a = 1.0;
  double b = 1.0;
  /// Weight of earlier batches' dictionary statistics carried into the next batch.
  double memory_decay = 1.0;
  /// Coordinate sweeps over every patch with the final dictionary before reconstruction.
  std::size_t final_sweeps = 2;
  /// After each patch update, local search over supports (add, drop or swap one atom with a
  /// joint refit). Finds exact codes on well-observed data; slower, and on sparsely observed
  /// maps it fits the observed pixels more tightly than it generalises.
  bool support_search = false;
  std::size_t threads = 1;
  /// Column-major N_op x K starting dictionary; overrides `init` when non-empty.
  std::vector<double> initial_dictionary;
};

struct BpfaModel {
  std::size_t patch_len = 0;  // N_op
  std::size_t atoms = 0;      // K
  std::size_t sparsity = 0;
  std::vector<double> dictionary;  // column-major N_op x K; atom k at [k * N_op, (k+1) * N_op)
  std::vector<double> weights;     // N_patch x K, posterior means mu_pk (0 where inactive)
  std::vector<std::uint8_t> usage; // N_patch x K
  std::vector<double> pi;          // K
  /// Patches with at least one observed element; only these contribute to reconstruction.
  std::vector<std::uint8_t> informed;
  double gamma_d = 1.0;
  double gamma_w = 1.0;
  double gamma_n = 1.0;
  double a = 1.0;
  double b = 1.0;
  /// Free energy of each batch: entry 0 before the first EM iteration, then one per iteration.
  std::vector<std::vector<double>> objective_trace;

  std::size_t patch_count() const noexcept { return atoms == 0 ? 0 : usage.size() / atoms; }
  std::span<const double> atom(std::size_t k) const {
    return {dictionary.data() + k * patch_len, patch_len};
  }
  double alpha(std::size_t patch, std::size_t k) const {
    return usage[patch * atoms + k] ? weights[patch * atoms + k] : 0.0;
  }
  std::size_t active_count(std::size_t patch) const;
  /// D alpha_p.
  std::vector<double> predict(std::size_t patch) const;
};

BpfaModel bpfa_fit(const PatchSet& patches, const BpfaParams& params);

/// Overlap average of the predictions of the informed patches covering each pixel, clamped
/// to [lo, hi]. A pixel covered by no informed patch is set to lo.
template <std::size_t C>
ChannelMap<C> reconstruct(const BpfaModel& model, const PatchGeometry& geometry, double lo,
                          double hi);

struct InpaintOptions {
  BpfaParams bpfa;
  PatchShape patch;
  /// Put observed values back after reconstruction (off: the model output is used everywhere).
  bool reimpose_observed = false;
};

/// Band contrast: normalised to [0, 255] before fitting and mapped back afterwards.
ScalarMap inpaint(const ScalarMap& map, const SampleMask& mask, const InpaintOptions& options);
/// IPF: channel-stacked patches, output clamped to [0, 1].
RgbMap inpaint(const RgbMap& map, const SampleMask& mask, const InpaintOptions& options);

}  // namespace cebsd
