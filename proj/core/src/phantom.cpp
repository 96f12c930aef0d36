#include "cebsd/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "cebsd/parallel.hpp"
#include "cebsd/random.hpp"

namespace cebsd {

GrainMap::GrainMap(ProbeGrid grid, std::vector<std::uint32_t> labels,
                   std::vector<Orientation> orientations)
    : grid_(grid), labels_(std::move(labels)), orientations_(std::move(orientations)) {
  if (labels_.size() != grid_.count()) {
    throw ShapeError("GrainMap: label count does not match grid " + to_string(grid_));
  }
  if (orientations_.empty()) throw std::invalid_argument("GrainMap: no grains");
  for (std::uint32_t l : labels_) {
    if (l >= orientations_.size()) throw std::invalid_argument("GrainMap: label out of range");
  }
  for (const auto& o : orientations_) {
    for (double v : o) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument("GrainMap: orientation component outside [0, 1]");
      }
    }
  }
  std::set<Orientation> unique(orientations_.begin(), orientations_.end());
  if (unique.size() != orientations_.size()) {
    throw std::invalid_argument("GrainMap: orientations must be pairwise distinct");
  }
}

GrainMap voronoi_phantom(ProbeGrid grid, std::span<const PixelCoord> sites,
                         std::vector<Orientation> orientations) {
  if (sites.empty()) throw std::invalid_argument("voronoi_phantom: no sites");
  if (sites.size() != orientations.size()) {
    throw std::invalid_argument("voronoi_phantom: one orientation per site required");
  }
  std::vector<std::uint32_t> labels(grid.count());
  for (std::size_t l = 0; l < grid.count(); ++l) {
    const auto [row, col] = grid.coords_of(l);
    std::uint64_t best = UINT64_MAX;
    std::uint32_t best_site = 0;
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const auto dr = static_cast<std::int64_t>(row) - static_cast<std::int64_t>(sites[s].row);
      const auto dc = static_cast<std::int64_t>(col) - static_cast<std::int64_t>(sites[s].col);
      const auto d2 = static_cast<std::uint64_t>(dr * dr + dc * dc);
      if (d2 < best) {
        best = d2;
        best_site = static_cast<std::uint32_t>(s);
      }
    }
    labels[l] = best_site;
  }
  return GrainMap(grid, std::move(labels), std::move(orientations));
}

GrainMap voronoi_phantom(ProbeGrid grid, std::size_t n_grains, std::uint64_t seed) {
  if (n_grains == 0 || n_grains > grid.count()) {
    throw std::invalid_argument("voronoi_phantom: need 1 <= n_grains <= " +
                                std::to_string(grid.count()) + ", got " +
                                std::to_string(n_grains));
  }
  Rng rng = make_rng(seed, 0x5175);
  std::set<std::size_t> chosen;
  std::uniform_int_distribution<std::size_t> pick(0, grid.count() - 1);
  std::vector<PixelCoord> sites;
  sites.reserve(n_grains);
  while (sites.size() < n_grains) {
    const std::size_t l = pick(rng);
    if (chosen.insert(l).second) sites.push_back(grid.coords_of(l));
  }

  std::uniform_real_distribution<double> component(0.15, 0.95);
  std::set<Orientation> seen;
  std::vector<Orientation> orientations;
  orientations.reserve(n_grains);
  while (orientations.size() < n_grains) {
    Orientation o{component(rng), component(rng), component(rng)};
    if (seen.insert(o).second) orientations.push_back(o);
  }
  return voronoi_phantom(grid, sites, std::move(orientations));
}

std::vector<bool> boundary_flags(const GrainMap& gm) {
  const auto& g = gm.grid();
  const auto labels = gm.labels();
  std::vector<bool> flags(g.count(), false);
  for (std::size_t r = 0; r < g.height(); ++r) {
    for (std::size_t c = 0; c < g.width(); ++c) {
      const std::size_t l = g.index_of(r, c);
      const std::uint32_t own = labels[l];
      const bool differs = (r > 0 && labels[l - g.width()] != own) ||
                           (r + 1 < g.height() && labels[l + g.width()] != own) ||
                           (c > 0 && labels[l - 1] != own) ||
                           (c + 1 < g.width() && labels[l + 1] != own);
      flags[l] = differs;
    }
  }
  return flags;
}

PhantomMaps phantom_maps(const GrainMap& gm, double boundary_contrast) {
  if (!(boundary_contrast >= 0.0 && boundary_contrast <= 1.0)) {
    throw std::invalid_argument("phantom_maps: boundary_contrast must lie in [0, 1]");
  }
  const auto& g = gm.grid();
  const auto flags = boundary_flags(gm);
  std::vector<double> bc(g.count());
  std::array<std::vector<double>, 3> rgb;
  for (auto& ch : rgb) ch.resize(g.count());
  for (std::size_t l = 0; l < g.count(); ++l) {
    bc[l] = flags[l] ? boundary_contrast : 1.0;
    const auto& o = gm.orientation_at(l);
    for (std::size_t c = 0; c < 3; ++c) rgb[c][l] = o[c];
  }
  return {ScalarMap(g, std::move(bc)), RgbMap(g, std::move(rgb))};
}

Pattern::Pattern(std::size_t height, std::size_t width, std::vector<double> intensities)
    : height_(height), width_(width), intensities_(std::move(intensities)) {
  if (height_ == 0 || width_ == 0) throw std::invalid_argument("Pattern: empty detector");
  if (intensities_.size() != height_ * width_) {
    throw ShapeError("Pattern: expected " + std::to_string(height_ * width_) +
                     " intensities, got " + std::to_string(intensities_.size()));
  }
  for (double v : intensities_) {
    if (!std::isfinite(v)) throw std::invalid_argument("Pattern: non-finite intensity");
  }
}

std::vector<BandLine> band_lines(const Orientation& o, std::size_t height, std::size_t width,
                                 std::size_t n_bands) {
  constexpr double pi = std::numbers::pi;
  const double rho_span = 0.3 * static_cast<double>(std::min(height, width));
  const double step = 0.25 + 0.5 * o[2];
  std::vector<BandLine> lines(n_bands);
  for (std::size_t j = 0; j < n_bands; ++j) {
    const double t = o[0] + static_cast<double>(j) / static_cast<double>(n_bands);
    lines[j].theta = pi * (t - std::floor(t));
    lines[j].rho = rho_span * std::sin(2.0 * pi * (o[1] + static_cast<double>(j + 1) * step));
  }
  return lines;
}

Pattern synth_pattern(const Orientation& orientation, std::size_t height, std::size_t width,
                      std::size_t n_bands, double band_width, double amplitude) {
  if (n_bands == 0) throw std::invalid_argument("synth_pattern: n_bands must be >= 1");
  if (!(band_width > 0.0)) throw std::invalid_argument("synth_pattern: band_width must be > 0");
  if (!(amplitude >= 0.0)) throw std::invalid_argument("synth_pattern: amplitude must be >= 0");

  const auto lines = band_lines(orientation, height, width, n_bands);
  const double half = 0.5 * band_width;
  const double cx = 0.5 * static_cast<double>(width - 1);
  const double cy = 0.5 * static_cast<double>(height - 1);
  std::vector<double> px(height * width, 1.0);
  if (amplitude == 0.0) return Pattern(height, width, std::move(px));

  for (const auto& line : lines) {
    const double ct = std::cos(line.theta);
    const double st = std::sin(line.theta);
    for (std::size_t r = 0; r < height; ++r) {
      const double y = static_cast<double>(r) - cy;
      for (std::size_t c = 0; c < width; ++c) {
        const double x = static_cast<double>(c) - cx;
        if (std::abs(x * ct + y * st - line.rho) <= half) px[r * width + c] += amplitude;
      }
    }
  }
  return Pattern(height, width, std::move(px));
}

Pattern synth_probe_pattern(const GrainMap& gm, const std::vector<bool>& boundaries,
                            std::size_t index, const PatternParams& params) {
  const double amp =
      boundaries[index] ? params.amplitude * params.boundary_contrast : params.amplitude;
  return synth_pattern(gm.orientation_at(index), params.height, params.width, params.n_bands,
                       params.band_width, amp);
}

PatternStack synth_stack(const GrainMap& gm, const SampleMask& mask, const PatternParams& params,
                         std::size_t threads) {
  if (!(mask.grid() == gm.grid())) {
    throw ShapeError("synth_stack: mask grid " + to_string(mask.grid()) +
                     " differs from grain map grid " + to_string(gm.grid()));
  }
  const auto boundaries = boundary_flags(gm);
  const auto sampled = mask.sampled();

  std::vector<std::optional<Pattern>> slots(sampled.size());
  parallel_for(sampled.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      slots[i].emplace(synth_probe_pattern(gm, boundaries, sampled[i], params));
    }
  });

  PatternStack stack{mask, params.height, params.width, {}};
  stack.patterns.reserve(slots.size());
  for (auto& s : slots) stack.patterns.push_back(std::move(*s));
  return stack;
}

}  // namespace cebsd
