#pragma once

// On-disk formats: 8-bit PGM/PPM maps, mask JSON, pattern stacks ("EBCS") and JSON sidecars.

#include <filesystem>
#include <string>

#include "cebsd/map_core.hpp"
#include "cebsd/phantom.hpp"

namespace cebsd {

/// Binary PGM (P5, maxval 255). Values are rounded and clamped to [0, 255].
void write_pgm(const std::filesystem::path& path, const ScalarMap& map);
/// Pixel values come back as the integers 0..255.
ScalarMap read_pgm(const std::filesystem::path& path);

/// Binary PPM (P6, maxval 255). Channel values in [0, 1] are stored as round(255 v).
void write_ppm(const std::filesystem::path& path, const RgbMap& map);
/// Channel values come back as byte / 255.
RgbMap read_ppm(const std::filesystem::path& path);

/// {"height", "width", "sampled": [...], "zsp": [...]}, indices ascending.
std::string mask_to_json(const SampleMask& mask);
SampleMask mask_from_json(const std::string& text);
void write_mask(const std::filesystem::path& path, const SampleMask& mask);
SampleMask read_mask(const std::filesystem::path& path);

/// "EBCS", u16 version, u32 H_p, W_p, H_d, W_d, u64 count, then count payloads of
/// H_d * W_d little-endian float32 in ascending probe order. The probe indices live in the
/// companion mask file.
void write_stack(const std::filesystem::path& path, const PatternStack& stack);
PatternStack read_stack(const std::filesystem::path& path, const SampleMask& mask);

/// Sidecar next to a map file: normalisation record plus free-form provenance (JSON text).
void write_sidecar(const std::filesystem::path& path, const NormalizationRecord* record,
                   const std::string& provenance_json);
NormalizationRecord read_sidecar_record(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace cebsd
