#include "cebsd/indexing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <tuple>

#include "cebsd/parallel.hpp"
#include "cebsd/sampling.hpp"

namespace cebsd {

namespace {

constexpr double kPi = std::numbers::pi;

/// Precomputed flat bin offset for every (pixel, theta) pair of one detector geometry,
/// plus the number of pixels on every line.
struct HoughTable {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t n_theta = 0;
  std::size_t n_rho = 0;
  double rho_max = 0.0;
  std::vector<std::uint32_t> offsets;  // [pixel * n_theta + t] -> t * n_rho + r
  std::vector<double> line_pixels;     // per bin
};

std::shared_ptr<const HoughTable> make_table(std::size_t h, std::size_t w, std::size_t nt,
                                             std::size_t nr) {
  auto table = std::make_shared<HoughTable>();
  table->height = h;
  table->width = w;
  table->n_theta = nt;
  table->n_rho = nr;
  table->rho_max = 0.5 * std::hypot(static_cast<double>(h), static_cast<double>(w));
  table->offsets.resize(h * w * nt);
  table->line_pixels.assign(nt * nr, 0.0);

  const double cx = 0.5 * static_cast<double>(w - 1);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double scale = static_cast<double>(nr) / (2.0 * table->rho_max);
  std::vector<double> cs(nt), sn(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    const double theta = kPi * static_cast<double>(t) / static_cast<double>(nt);
    cs[t] = std::cos(theta);
    sn[t] = std::sin(theta);
  }
  for (std::size_t r = 0; r < h; ++r) {
    const double y = static_cast<double>(r) - cy;
    for (std::size_t c = 0; c < w; ++c) {
      const double x = static_cast<double>(c) - cx;
      const std::size_t p = r * w + c;
      for (std::size_t t = 0; t < nt; ++t) {
        const double rho = x * cs[t] + y * sn[t];
        auto bin = static_cast<long long>(std::floor((rho + table->rho_max) * scale));
        bin = std::clamp<long long>(bin, 0, static_cast<long long>(nr) - 1);
        const auto flat = static_cast<std::uint32_t>(t * nr + static_cast<std::size_t>(bin));
        table->offsets[p * nt + t] = flat;
        table->line_pixels[flat] += 1.0;
      }
    }
  }
  return table;
}

std::shared_ptr<const HoughTable> hough_table(std::size_t h, std::size_t w, std::size_t nt,
                                              std::size_t nr) {
  static std::mutex mutex;
  static std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>,
                  std::shared_ptr<const HoughTable>>
      cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{h, w, nt, nr}];
  if (!slot) slot = make_table(h, w, nt, nr);
  return slot;
}

void check_resolution(std::size_t n_theta, std::size_t n_rho) {
  if (n_theta < 8 || n_rho < 8) {
    throw std::invalid_argument("hough_transform: n_theta and n_rho must be >= 8");
  }
}

HoughAccumulator accumulate(const Pattern& pattern, const HoughTable& table, double offset) {
  HoughAccumulator acc;
  acc.n_theta = table.n_theta;
  acc.n_rho = table.n_rho;
  acc.rho_max = table.rho_max;
  acc.bins.assign(table.n_theta * table.n_rho, 0.0);
  const auto px = pattern.intensities();
  const std::size_t nt = table.n_theta;
  for (std::size_t p = 0; p < px.size(); ++p) {
    const double v = px[p] - offset;
    const std::uint32_t* off = &table.offsets[p * nt];
    for (std::size_t t = 0; t < nt; ++t) acc.bins[off[t]] += v;
  }
  return acc;
}

}  // namespace

double HoughAccumulator::theta_of(std::size_t t) const {
  return kPi * static_cast<double>(t) / static_cast<double>(n_theta);
}

double HoughAccumulator::rho_of(std::size_t r) const {
  return -rho_max + (static_cast<double>(r) + 0.5) * rho_step();
}

HoughAccumulator hough_transform(const Pattern& pattern, std::size_t n_theta, std::size_t n_rho) {
  check_resolution(n_theta, n_rho);
  const auto table = hough_table(pattern.height(), pattern.width(), n_theta, n_rho);
  return accumulate(pattern, *table, 0.0);
}

HoughAccumulator line_mean_transform(const Pattern& pattern, const IndexingParams& params) {
  check_resolution(params.n_theta, params.n_rho);
  const auto table = hough_table(pattern.height(), pattern.width(), params.n_theta, params.n_rho);
  const auto px = pattern.intensities();
  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= static_cast<double>(px.size());

  HoughAccumulator acc = accumulate(pattern, *table, mean);
  const double min_pixels =
      params.min_line_fraction * static_cast<double>(std::min(pattern.height(), pattern.width()));
  acc.valid.assign(acc.bins.size(), 0);
  for (std::size_t b = 0; b < acc.bins.size(); ++b) {
    const double n = table->line_pixels[b];
    if (n >= min_pixels && n > 0.0) {
      acc.bins[b] /= n;
      acc.valid[b] = 1;
    } else {
      acc.bins[b] = 0.0;
    }
  }
  return acc;
}

std::vector<Band> detect_bands(const HoughAccumulator& acc, const BandDetectionParams& params) {
  if (params.max_bands == 0) throw std::invalid_argument("detect_bands: max_bands must be >= 1");
  const std::size_t nt = acc.n_theta;
  const std::size_t nr = acc.n_rho;

  std::vector<double> values;
  values.reserve(acc.bins.size());
  for (std::size_t b = 0; b < acc.bins.size(); ++b) {
    if (acc.is_valid(b)) values.push_back(acc.bins[b]);
  }
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(values.size()));
  if (!(sd > 0.0)) return {};
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double median = *mid;

  std::vector<unsigned char> suppressed(acc.bins.size(), 0);
  std::vector<Band> bands;
  while (bands.size() < params.max_bands) {
    std::size_t best = acc.bins.size();
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < acc.bins.size(); ++b) {
      if (!suppressed[b] && acc.is_valid(b) && acc.bins[b] > best_value) {
        best_value = acc.bins[b];
        best = b;
      }
    }
    if (best == acc.bins.size()) break;
    const double prominence = (best_value - median) / sd;
    if (prominence < params.min_prominence) break;

    const std::size_t t = best / nr;
    const std::size_t r = best % nr;
    bands.push_back({acc.theta_of(t), acc.rho_of(r), t, r, prominence});

    const auto st = static_cast<long long>(params.suppress_theta);
    const auto sr = static_cast<long long>(params.suppress_rho);
    for (long long dt = -st; dt <= st; ++dt) {
      long long tt = static_cast<long long>(t) + dt;
      bool mirrored = false;
      if (tt < 0) {
        tt += static_cast<long long>(nt);
        mirrored = true;
      } else if (tt >= static_cast<long long>(nt)) {
        tt -= static_cast<long long>(nt);
        mirrored = true;
      }
      const long long centre =
          mirrored ? static_cast<long long>(nr) - 1 - static_cast<long long>(r)
                   : static_cast<long long>(r);
      for (long long dr = -sr; dr <= sr; ++dr) {
        const long long rr = centre + dr;
        if (rr < 0 || rr >= static_cast<long long>(nr)) continue;
        suppressed[static_cast<std::size_t>(tt) * nr + static_cast<std::size_t>(rr)] = 1;
      }
    }
  }
  return bands;
}

std::vector<Band> detect_bands(const HoughAccumulator& acc, std::size_t max_bands,
                               double min_prominence) {
  BandDetectionParams p;
  p.max_bands = max_bands;
  p.min_prominence = min_prominence;
  return detect_bands(acc, p);
}

double band_contrast(const Pattern& pattern, std::span<const BandLine> lines, double half_width) {
  if (lines.empty()) return 0.0;
  const std::size_t h = pattern.height();
  const std::size_t w = pattern.width();
  const double cx = 0.5 * static_cast<double>(w - 1);
  const double cy = 0.5 * static_cast<double>(h - 1);
  std::vector<double> ct(lines.size()), st(lines.size());
  for (std::size_t j = 0; j < lines.size(); ++j) {
    ct[j] = std::cos(lines[j].theta);
    st[j] = std::sin(lines[j].theta);
  }
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t r = 0; r < h; ++r) {
    const double y = static_cast<double>(r) - cy;
    for (std::size_t c = 0; c < w; ++c) {
      const double x = static_cast<double>(c) - cx;
      bool inside = false;
      for (std::size_t j = 0; j < lines.size() && !inside; ++j) {
        inside = std::abs(x * ct[j] + y * st[j] - lines[j].rho) <= half_width;
      }
      const double v = pattern(r, c);
      if (inside) {
        in_sum += v;
        ++in_n;
      } else {
        out_sum += v;
        ++out_n;
      }
    }
  }
  if (in_n == 0 || out_n == 0) return 0.0;
  const double contrast =
      in_sum / static_cast<double>(in_n) - out_sum / static_cast<double>(out_n);
  return std::max(0.0, contrast);
}

double band_contrast(const Pattern& pattern, std::span<const Band> bands, double half_width) {
  std::vector<BandLine> lines;
  lines.reserve(bands.size());
  for (const auto& b : bands) lines.push_back({b.theta, b.rho});
  return band_contrast(pattern, lines, half_width);
}

OrientationLibrary::OrientationLibrary(std::vector<LibraryEntry> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw std::invalid_argument("OrientationLibrary: empty library");
  for (auto& e : entries_) {
    std::sort(e.signature.begin(), e.signature.end(), [](const Band& a, const Band& b) {
      return std::tie(a.theta_bin, a.rho_bin) < std::tie(b.theta_bin, b.rho_bin);
    });
  }
  auto key = [](const LibraryEntry& e) {
    std::vector<std::pair<std::size_t, std::size_t>> k;
    for (const auto& b : e.signature) k.emplace_back(b.theta_bin, b.rho_bin);
    return k;
  };
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    for (std::size_t j = i + 1; j < entries_.size(); ++j) {
      if (key(entries_[i]) == key(entries_[j])) {
        throw std::invalid_argument("OrientationLibrary: entries " + std::to_string(i) + " and " +
                                    std::to_string(j) + " share a band signature");
      }
    }
  }
}

OrientationLibrary build_library(std::span<const Orientation> orientations,
                                 const PatternParams& pattern_params,
                                 const IndexingParams& params) {
  std::vector<LibraryEntry> entries;
  entries.reserve(orientations.size());
  for (const auto& o : orientations) {
    const Pattern p = synth_pattern(o, pattern_params.height, pattern_params.width,
                                    pattern_params.n_bands, pattern_params.band_width,
                                    pattern_params.amplitude);
    entries.push_back({o, detect_bands(line_mean_transform(p, params), params.detection)});
  }
  return OrientationLibrary(std::move(entries));
}

double signature_distance(std::span<const Band> detected, std::span<const Band> reference,
                          const IndexingParams& params) {
  const double gap = params.gap_penalty;
  const std::size_t n = detected.size();
  const std::size_t m = reference.size();
  if (n == 0 || m == 0) return gap * static_cast<double>(n + m);

  // Work in bin units: theta in theta bins, rho in rho bins (centre-relative).
  struct P {
    double t, r;
  };
  const double period = static_cast<double>(params.n_theta);
  const double rho_mid = 0.5 * static_cast<double>(params.n_rho) - 0.5;
  auto to_p = [&](const Band& b) {
    return P{static_cast<double>(b.theta_bin), static_cast<double>(b.rho_bin) - rho_mid};
  };
  std::vector<P> det(n), ref(m);
  for (std::size_t i = 0; i < n; ++i) det[i] = to_p(detected[i]);
  for (std::size_t j = 0; j < m; ++j) ref[j] = to_p(reference[j]);
  std::sort(det.begin(), det.end(), [](P a, P b) { return a.t < b.t; });
  std::sort(ref.begin(), ref.end(), [](P a, P b) { return a.t < b.t; });

  std::vector<P> seq(m);
  std::vector<double> prev(m + 1), cur(m + 1);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m; ++k) {
    for (int variant = 0; variant < 2; ++variant) {
      // Unwrap the cyclic reference order starting at k: variant 0 moves the head past pi,
      // variant 1 moves the tail below 0. Moving a line by pi negates its rho.
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t idx = (k + j) % m;
        const bool wrapped = k + j >= m;
        P p = ref[idx];
        if (variant == 0 && wrapped) p = {p.t + period, -p.r};
        if (variant == 1 && !wrapped) p = {p.t - period, -p.r};
        seq[j] = p;
      }
      for (std::size_t j = 0; j <= m; ++j) prev[j] = gap * static_cast<double>(j);
      for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = gap * static_cast<double>(i);
        for (std::size_t j = 1; j <= m; ++j) {
          const double match =
              prev[j - 1] + std::abs(det[i - 1].t - seq[j - 1].t) + std::abs(det[i - 1].r - seq[j - 1].r);
          cur[j] = std::min({match, prev[j] + gap, cur[j - 1] + gap});
        }
        std::swap(prev, cur);
      }
      best = std::min(best, prev[m]);
    }
  }
  return best;
}

std::size_t supporting_bands(std::span<const Band> detected, std::span<const Band> reference,
                             const IndexingParams& params) {
  const double period = static_cast<double>(params.n_theta);
  const double rho_mid = 0.5 * static_cast<double>(params.n_rho) - 0.5;
  std::size_t votes = 0;
  for (const auto& d : detected) {
    const double dt = static_cast<double>(d.theta_bin);
    const double dr = static_cast<double>(d.rho_bin) - rho_mid;
    for (const auto& r : reference) {
      const double rt = static_cast<double>(r.theta_bin);
      const double rr = static_cast<double>(r.rho_bin) - rho_mid;
      const double direct = std::abs(dt - rt) + std::abs(dr - rr);
      const double wrapped = (period - std::abs(dt - rt)) + std::abs(dr + rr);
      if (std::min(direct, wrapped) <= params.match_tolerance) {
        ++votes;
        break;
      }
    }
  }
  return votes;
}

IndexingResult index_pattern(const Pattern& pattern, const OrientationLibrary& library,
                             const IndexingParams& params) {
  IndexingResult result;
  const auto bands = detect_bands(line_mean_transform(pattern, params), params.detection);
  result.n_bands_found = bands.size();
  result.band_contrast = band_contrast(pattern, bands, params.band_half_width);
  if (bands.size() < params.min_bands_required) return result;

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_idx = 0;
  const auto entries = library.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const double d = signature_distance(bands, entries[i].signature, params);
    if (d < best) {
      best = d;
      best_idx = i;
    }
  }
  result.match_distance = best;
  if (supporting_bands(bands, entries[best_idx].signature, params) <
      params.min_bands_required) {
    return result;
  }
  result.orientation = entries[best_idx].orientation;
  result.library_index = best_idx;
  return result;
}

IndexedMaps index_probes(const SampleMask& mask, const PatternSource& source,
                         const OrientationLibrary& library, const IndexingParams& params,
                         std::size_t threads) {
  const auto sampled = mask.sampled();
  std::vector<IndexingResult> results(sampled.size());
  parallel_for(sampled.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      results[i] = index_pattern(source(i, sampled[i]), library, params);
    }
  });

  const ProbeGrid& grid = mask.grid();
  std::vector<double> bc(grid.count(), 0.0);
  std::array<std::vector<double>, 3> rgb;
  for (auto& ch : rgb) ch.assign(grid.count(), 0.0);
  std::vector<std::size_t> zsp;
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    const std::size_t l = sampled[i];
    bc[l] = results[i].band_contrast;
    if (results[i].is_zsp()) {
      zsp.push_back(l);
    } else {
      for (std::size_t c = 0; c < 3; ++c) rgb[c][l] = (*results[i].orientation)[c];
    }
  }

  IndexedMaps out{ScalarMap(grid, std::move(bc)), RgbMap(grid, std::move(rgb)),
                  merge_zsp(mask, zsp), zsp, 1.0, 1.0};
  out.hit_rate =
      1.0 - static_cast<double>(zsp.size()) / static_cast<double>(grid.count());
  out.hit_rate_sampled =
      sampled.empty() ? 1.0
                      : 1.0 - static_cast<double>(zsp.size()) / static_cast<double>(sampled.size());
  return out;
}

IndexedMaps index_stack(const PatternStack& stack, const OrientationLibrary& library,
                        const IndexingParams& params, std::size_t threads) {
  if (stack.patterns.size() != stack.mask.sampled_count()) {
    throw ShapeError("index_stack: stack holds " + std::to_string(stack.patterns.size()) +
                     " patterns for " + std::to_string(stack.mask.sampled_count()) +
                     " sampled probes");
  }
  return index_probes(
      stack.mask, [&](std::size_t position, std::size_t) { return stack.patterns[position]; },
      library, params, threads);
}

}  // namespace cebsd
