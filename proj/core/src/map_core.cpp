#include "cebsd/map_core.hpp"

#include <algorithm>

namespace cebsd {

std::string to_string(const ProbeGrid& grid) {
  return std::to_string(grid.height()) + "x" + std::to_string(grid.width());
}

namespace {

void sort_unique(std::vector<std::size_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

SampleMask::SampleMask(ProbeGrid grid, std::vector<std::size_t> sampled,
                       std::vector<std::size_t> zsp)
    : grid_(grid), sampled_(std::move(sampled)), zsp_(std::move(zsp)),
      flags_(grid.count(), kUnsampled) {
  sort_unique(sampled_);
  sort_unique(zsp_);
  for (std::size_t l : sampled_) {
    if (!grid_.contains(l)) {
      throw std::invalid_argument("SampleMask: sampled index " + std::to_string(l) +
                                  " outside grid " + to_string(grid_));
    }
    flags_[l] = kSampled;
  }
  for (std::size_t l : zsp_) {
    if (!grid_.contains(l)) {
      throw std::invalid_argument("SampleMask: zsp index " + std::to_string(l) +
                                  " outside grid " + to_string(grid_));
    }
    if (flags_[l] == kSampled) {
      throw std::invalid_argument("SampleMask: index " + std::to_string(l) +
                                  " is both sampled and a zero-solution pixel");
    }
    flags_[l] = kZsp;
  }
}

SampleMask SampleMask::full(ProbeGrid grid) {
  std::vector<std::size_t> all(grid.count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return SampleMask(grid, std::move(all));
}

NormalizedMap normalize_map(const ScalarMap& map, double target_lo, double target_hi) {
  if (!(target_lo < target_hi)) {
    throw std::invalid_argument("normalize_map: target_lo must be < target_hi");
  }
  const auto values = map.values();
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());

  NormalizationRecord rec;
  rec.source_min = *lo_it;
  rec.source_max = *hi_it;
  rec.target_lo = target_lo;
  rec.target_hi = target_hi;
  rec.length = values.size();
  rec.degenerate = rec.source_max == rec.source_min;

  std::vector<double> out(values.size(), target_lo);
  if (!rec.degenerate) {
    const double scale = (target_hi - target_lo) / (rec.source_max - rec.source_min);
    for (std::size_t i = 0; i < values.size(); ++i) {
      out[i] = target_lo + (values[i] - rec.source_min) * scale;
    }
    // pin the endpoints so they do not drift by an ulp
    out[lo_it - values.begin()] = target_lo;
    out[hi_it - values.begin()] = target_hi;
  }
  return {ScalarMap(map.grid(), std::move(out)), rec};
}

ScalarMap denormalize_map(const ScalarMap& map, const NormalizationRecord& record) {
  if (map.size() != record.length) {
    throw ShapeError("denormalize_map: map has " + std::to_string(map.size()) +
                     " values, record was made for " + std::to_string(record.length));
  }
  const auto values = map.values();
  std::vector<double> out(values.size(), record.source_min);
  if (!record.degenerate) {
    const double scale =
        (record.source_max - record.source_min) / (record.target_hi - record.target_lo);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] == record.target_lo) {
        out[i] = record.source_min;
      } else if (values[i] == record.target_hi) {
        out[i] = record.source_max;
      } else {
        out[i] = record.source_min + (values[i] - record.target_lo) * scale;
      }
    }
  }
  return ScalarMap(map.grid(), std::move(out));
}

}  // namespace cebsd
