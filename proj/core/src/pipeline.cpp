#include "cebsd/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cebsd/io.hpp"
#include "cebsd/random.hpp"
#include "json.hpp"

namespace cebsd {

using nlohmann::json;

void ExperimentConfig::validate() const {
  for (double r : rates) {
    if (!(r > 0.0) || r > 1.0) throw std::invalid_argument("config: rates must lie in (0, 1]");
  }
  if (seeds.empty()) throw std::invalid_argument("config: at least one seed is required");
  if (map_kinds.empty()) throw std::invalid_argument("config: at least one map kind is required");
  if (phantom.grains == 0) throw std::invalid_argument("config: phantom needs grains");
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!ok.count(item.key())) {
      throw std::invalid_argument("config: unknown key '" + where + "." + item.key() + "'");
    }
  }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"phantom", "indexing", "noise_kinds", "snrs_db", "include_noiseless",
                    "strategy", "rates", "map_kinds", "zsp_correction", "bpfa", "ssim", "seeds",
                    "threads", "output_dir", "write_maps"},
                   "config");
    if (j.contains("phantom")) {
      const auto& p = j.at("phantom");
      reject_unknown(p, {"height", "width", "grains", "seed", "pattern"}, "phantom");
      take(p, "height", c.phantom.height);
      take(p, "width", c.phantom.width);
      take(p, "grains", c.phantom.grains);
      take(p, "seed", c.phantom.seed);
      if (p.contains("pattern")) {
        const auto& q = p.at("pattern");
        reject_unknown(q,
                       {"height", "width", "n_bands", "band_width", "amplitude",
                        "boundary_contrast"},
                       "phantom.pattern");
        auto& pp = c.phantom.pattern;
        take(q, "height", pp.height);
        take(q, "width", pp.width);
        take(q, "n_bands", pp.n_bands);
        take(q, "band_width", pp.band_width);
        take(q, "amplitude", pp.amplitude);
        take(q, "boundary_contrast", pp.boundary_contrast);
      }
    }
    if (j.contains("indexing")) {
      const auto& q = j.at("indexing");
      reject_unknown(q,
                     {"n_theta", "n_rho", "max_bands", "min_prominence", "min_bands_required",
                      "band_half_width", "min_line_fraction", "gap_penalty", "match_tolerance"},
                     "indexing");
      auto& ip = c.indexing;
      take(q, "n_theta", ip.n_theta);
      take(q, "n_rho", ip.n_rho);
      take(q, "max_bands", ip.detection.max_bands);
      take(q, "min_prominence", ip.detection.min_prominence);
      take(q, "min_bands_required", ip.min_bands_required);
      take(q, "band_half_width", ip.band_half_width);
      take(q, "min_line_fraction", ip.min_line_fraction);
      take(q, "gap_penalty", ip.gap_penalty);
      take(q, "match_tolerance", ip.match_tolerance);
    }
    if (j.contains("noise_kinds")) {
      c.noise_kinds.clear();
      for (const auto& n : j.at("noise_kinds")) c.noise_kinds.push_back(parse_noise_kind(n));
    }
    take(j, "snrs_db", c.snrs_db);
    take(j, "include_noiseless", c.include_noiseless);
    if (j.contains("strategy")) c.strategy = parse_sampling_strategy(j.at("strategy"));
    take(j, "rates", c.rates);
    if (j.contains("map_kinds")) {
      c.map_kinds.clear();
      for (const auto& m : j.at("map_kinds")) c.map_kinds.push_back(parse_map_kind(m));
    }
    if (j.contains("zsp_correction")) {
      const auto& z = j.at("zsp_correction");
      reject_unknown(z, {"bc", "ipf"}, "zsp_correction");
      take(z, "bc", c.zsp_correction_bc);
      take(z, "ipf", c.zsp_correction_ipf);
    }
    if (j.contains("bpfa")) {
      const auto& b = j.at("bpfa");
      reject_unknown(b,
                     {"atoms", "sparsity", "batch_size", "epochs", "em_iters_per_batch", "init",
                      "a", "b", "memory_decay", "final_sweeps", "support_search"},
                     "bpfa");
      take(b, "atoms", c.bpfa.atoms);
      take(b, "sparsity", c.bpfa.sparsity);
      take(b, "batch_size", c.bpfa.batch_size);
      take(b, "epochs", c.bpfa.epochs);
      take(b, "em_iters_per_batch", c.bpfa.em_iters_per_batch);
      if (b.contains("init")) c.bpfa.init = parse_init_scheme(b.at("init"));
      take(b, "a", c.bpfa.a);
      take(b, "b", c.bpfa.b);
      take(b, "memory_decay", c.bpfa.memory_decay);
      take(b, "final_sweeps", c.bpfa.final_sweeps);
      take(b, "support_search", c.bpfa.support_search);
    }
    if (j.contains("ssim")) {
      const auto& s = j.at("ssim");
      reject_unknown(s, {"window", "k1", "k2", "gaussian"}, "ssim");
      take(s, "window", c.ssim.window);
      take(s, "k1", c.ssim.k1);
      take(s, "k2", c.ssim.k2);
      bool gaussian = false;
      take(s, "gaussian", gaussian);
      c.ssim.kind = gaussian ? SsimWindow::gaussian : SsimWindow::uniform;
    }
    take(j, "seeds", c.seeds);
    take(j, "threads", c.threads);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    take(j, "write_maps", c.write_maps);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  const auto& pp = c.phantom.pattern;
  j["phantom"] = {{"height", c.phantom.height},
                  {"width", c.phantom.width},
                  {"grains", c.phantom.grains},
                  {"seed", c.phantom.seed},
                  {"pattern",
                   {{"height", pp.height},
                    {"width", pp.width},
                    {"n_bands", pp.n_bands},
                    {"band_width", pp.band_width},
                    {"amplitude", pp.amplitude},
                    {"boundary_contrast", pp.boundary_contrast}}}};
  const auto& ip = c.indexing;
  j["indexing"] = {{"n_theta", ip.n_theta},
                   {"n_rho", ip.n_rho},
                   {"max_bands", ip.detection.max_bands},
                   {"min_prominence", ip.detection.min_prominence},
                   {"min_bands_required", ip.min_bands_required},
                   {"band_half_width", ip.band_half_width},
                   {"min_line_fraction", ip.min_line_fraction},
                   {"gap_penalty", ip.gap_penalty},
                   {"match_tolerance", ip.match_tolerance}};
  j["noise_kinds"] = json::array();
  for (auto n : c.noise_kinds) j["noise_kinds"].push_back(to_string(n));
  j["snrs_db"] = c.snrs_db;
  j["include_noiseless"] = c.include_noiseless;
  j["strategy"] = to_string(c.strategy);
  j["rates"] = c.rates;
  j["map_kinds"] = json::array();
  for (auto m : c.map_kinds) j["map_kinds"].push_back(to_string(m));
  j["zsp_correction"] = {{"bc", c.zsp_correction_bc}, {"ipf", c.zsp_correction_ipf}};
  j["bpfa"] = {{"atoms", c.bpfa.atoms},
               {"sparsity", c.bpfa.sparsity},
               {"batch_size", c.bpfa.batch_size},
               {"epochs", c.bpfa.epochs},
               {"em_iters_per_batch", c.bpfa.em_iters_per_batch},
               {"init", to_string(c.bpfa.init)},
               {"a", c.bpfa.a},
               {"b", c.bpfa.b},
               {"memory_decay", c.bpfa.memory_decay},
               {"final_sweeps", c.bpfa.final_sweeps},
               {"support_search", c.bpfa.support_search}};
  j["ssim"] = {{"window", c.ssim.window},
               {"k1", c.ssim.k1},
               {"k2", c.ssim.k2},
               {"gaussian", c.ssim.kind == SsimWindow::gaussian}};
  j["seeds"] = c.seeds;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir.string();
  j["write_maps"] = c.write_maps;
  return j.dump(2);
}

std::string csv_header() {
  return "experiment,seed,noise,target_snr_db,measured_snr_db,rate,effective_rate,map,"
         "zsp_correction,hit_rate,hit_rate_sampled,normalized_error,ssim,wall_time_s";
}

std::string csv_line(const ResultRow& r, bool include_timing) {
  std::ostringstream s;
  s << r.experiment << ',' << r.seed << ',' << to_string(r.noise) << ','
    << (r.target_snr_db ? fmt(*r.target_snr_db) : "") << ','
    << (r.measured_snr_db ? fmt(*r.measured_snr_db) : "") << ',' << fmt(r.rate) << ','
    << fmt(r.effective_rate) << ',' << to_string(r.map) << ',' << (r.zsp_correction ? 1 : 0)
    << ',' << fmt(r.hit_rate) << ',' << fmt(r.hit_rate_sampled) << ','
    << fmt(r.normalized_error) << ',' << fmt(r.ssim) << ',';
  if (include_timing) s << fmt(r.wall_time_s);
  return s.str();
}

std::string to_csv(const std::vector<ResultRow>& rows, bool include_timing) {
  std::string out = csv_header() + "\n";
  for (const auto& r : rows) out += csv_line(r, include_timing) + "\n";
  return out;
}

Scene make_scene(const ExperimentConfig& config) {
  const ProbeGrid grid(config.phantom.height, config.phantom.width);
  GrainMap grains = voronoi_phantom(grid, config.phantom.grains, config.phantom.seed);
  auto boundaries = boundary_flags(grains);
  auto truth = phantom_maps(grains, config.phantom.pattern.boundary_contrast);
  const auto ors = grains.orientations();
  auto library = build_library(std::vector<Orientation>(ors.begin(), ors.end()),
                               config.phantom.pattern, config.indexing);
  Scene scene{std::move(grains), std::move(boundaries), truth, std::move(library),
              ScalarMap(grid), truth.ipf};
  const auto clean = acquire(scene, config, SampleMask::full(grid), NoiseSpec{});
  scene.bc_reference = clean.maps.band_contrast;
  return scene;
}

AcquiredArm acquire(const Scene& scene, const ExperimentConfig& config, const SampleMask& mask,
                    const NoiseSpec& noise) {
  const auto& params = config.phantom.pattern;
  std::vector<double> snr(mask.sampled_count(), 0.0);
  const PatternSource source = [&](std::size_t position, std::size_t probe) {
    Pattern clean = synth_probe_pattern(scene.grains, scene.boundaries, probe, params);
    if (noise.kind == NoiseKind::none) return clean;
    const auto y = clean.intensities();
    auto c = corrupt(y, noise.for_stream(probe));
    snr[position] = c.snr_db();
    if (noise.kind == NoiseKind::poisson) {
      const double l1 = std::accumulate(y.begin(), y.end(), 0.0);
      const double gain = poisson_scale(y, noise.target_snr_db) / l1;
      for (double& v : c.values) v /= gain;
    }
    return Pattern(clean.height(), clean.width(), std::move(c.values));
  };
  AcquiredArm arm{index_probes(mask, source, scene.library, config.indexing, config.threads),
                  std::nullopt};
  if (noise.kind != NoiseKind::none && !snr.empty()) {
    arm.measured_snr_db = std::accumulate(snr.begin(), snr.end(), 0.0) /
                          static_cast<double>(snr.size());
  }
  return arm;
}

IndexedMaps restrict_to(const IndexedMaps& full, const SampleMask& mask) {
  if (!(full.band_contrast.grid() == mask.grid())) throw ShapeError("restrict_to: grid mismatch");
  std::vector<std::size_t> zsp;
  for (std::size_t l : full.zsp) {
    if (mask.is_sampled(l)) zsp.push_back(l);
  }
  IndexedMaps out{apply_mask(full.band_contrast, mask), apply_mask(full.ipf, mask),
                  merge_zsp(mask, zsp), zsp, 1.0, 1.0};
  const double n = static_cast<double>(mask.grid().count());
  out.hit_rate = 1.0 - static_cast<double>(zsp.size()) / n;
  out.hit_rate_sampled =
      mask.sampled_count() == 0
          ? 1.0
          : 1.0 - static_cast<double>(zsp.size()) / static_cast<double>(mask.sampled_count());
  return out;
}

ZspOutcome correct_zsp(const RgbMap& indexed, const SampleMask& mask,
                       const InpaintOptions& options) {
  auto zsp = detect_zsp(indexed, mask);
  SampleMask corrected_mask = merge_zsp(mask, zsp);
  RgbMap uncorrected = inpaint(indexed, mask, options);
  RgbMap corrected =
      zsp.empty() ? uncorrected : inpaint(indexed, corrected_mask, options);
  return {std::move(corrected), std::move(uncorrected), std::move(corrected_mask),
          std::move(zsp)};
}

InpaintOptions inpaint_options(const ExperimentConfig& config, double rate, MapKind kind,
                               std::uint64_t seed) {
  InpaintOptions o;
  o.bpfa = config.bpfa;
  o.bpfa.seed = derive_seed(seed, 0xb9fa);
  o.bpfa.threads = config.threads;
  o.patch = select_patch_shape(rate, kind);
  return o;
}

namespace {

struct Arm {
  NoiseKind kind;
  std::optional<double> snr;
};

std::vector<Arm> noise_arms(const ExperimentConfig& c, bool with_noiseless) {
  std::vector<Arm> arms;
  if (with_noiseless && c.include_noiseless) arms.push_back({NoiseKind::none, std::nullopt});
  for (auto k : c.noise_kinds) {
    if (k == NoiseKind::none) continue;
    for (double s : c.snrs_db) arms.push_back({k, s});
  }
  return arms;
}

NoiseSpec arm_noise(const Arm& arm, std::uint64_t seed) {
  if (arm.kind == NoiseKind::none) return {};
  const std::uint64_t tag = (static_cast<std::uint64_t>(arm.kind) << 32) ^
                            static_cast<std::uint64_t>(std::llround(*arm.snr * 1000.0));
  return {arm.kind, *arm.snr, derive_seed(seed, tag)};
}

std::string arm_tag(const Arm& arm) {
  if (arm.kind == NoiseKind::none) return "noiseless";
  return to_string(arm.kind) + short_num(*arm.snr) + "dB";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ResultRow base_row(const std::string& experiment, std::uint64_t seed, const Arm& arm,
                   const std::optional<double>& measured) {
  ResultRow r;
  r.experiment = experiment;
  r.seed = seed;
  r.noise = arm.kind;
  r.target_snr_db = arm.snr;
  r.measured_snr_db = arm.kind == NoiseKind::none ? std::nullopt : measured;
  return r;
}

// FNV-1a, so the hash is the same on every platform.
std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_json(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string provenance(const ExperimentConfig& c, std::uint64_t seed, const std::string& what) {
  json j;
  j["seed"] = seed;
  j["map"] = what;
  j["config_hash"] = config_hash(c);
  return j.dump();
}

void emit_scalar(const ExperimentConfig& c, const std::string& stem, const ScalarMap& map,
                 std::uint64_t seed) {
  if (c.output_dir.empty() || !c.write_maps) return;
  const auto norm = normalize_map(map, 0.0, 255.0);
  write_pgm(c.output_dir / (stem + ".pgm"), norm.map);
  write_sidecar(c.output_dir / (stem + ".json"), &norm.record, provenance(c, seed, stem));
}

void emit_rgb(const ExperimentConfig& c, const std::string& stem, const RgbMap& map,
              std::uint64_t seed) {
  if (c.output_dir.empty() || !c.write_maps) return;
  write_ppm(c.output_dir / (stem + ".ppm"), map);
  write_sidecar(c.output_dir / (stem + ".json"), nullptr, provenance(c, seed, stem));
}

void emit_csv(const ExperimentConfig& c, const std::string& name,
              const std::vector<ResultRow>& rows) {
  if (c.output_dir.empty()) return;
  write_text(c.output_dir / name, to_csv(rows));
}

}  // namespace

std::vector<ResultRow> run_indexing_robustness(const ExperimentConfig& config) {
  config.validate();
  const Scene scene = make_scene(config);
  const ProbeGrid grid = scene.grains.grid();
  std::vector<ResultRow> rows;
  for (const auto& arm : noise_arms(config, true)) {
    for (std::uint64_t seed : config.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto acq = acquire(scene, config, SampleMask::full(grid), arm_noise(arm, seed));
      const double elapsed = seconds_since(t0);
      for (MapKind kind : config.map_kinds) {
        ResultRow r = base_row("robustness", seed, arm, acq.measured_snr_db);
        r.map = kind;
        r.hit_rate = acq.maps.hit_rate;
        r.hit_rate_sampled = acq.maps.hit_rate_sampled;
        if (kind == MapKind::band_contrast) {
          r.normalized_error = normalized_error(scene.bc_reference, acq.maps.band_contrast);
          r.ssim = ssim(scene.bc_reference, acq.maps.band_contrast, config.ssim);
        } else {
          r.normalized_error = normalized_error(scene.ipf_reference, acq.maps.ipf);
          r.ssim = ssim(scene.ipf_reference, acq.maps.ipf, config.ssim);
        }
        r.wall_time_s = elapsed;
        rows.push_back(r);
      }
      const std::string stem = "robustness/" + arm_tag(arm) + "_seed" + std::to_string(seed);
      emit_scalar(config, stem + "_bc", acq.maps.band_contrast, seed);
      emit_rgb(config, stem + "_ipf", acq.maps.ipf, seed);
    }
  }
  emit_csv(config, "robustness.csv", rows);
  return rows;
}

std::vector<ResultRow> run_zsp_correction(const ExperimentConfig& config) {
  config.validate();
  const Scene scene = make_scene(config);
  const ProbeGrid grid = scene.grains.grid();
  const SampleMask full = SampleMask::full(grid);
  std::vector<ResultRow> rows;
  for (const auto& arm : noise_arms(config, false)) {
    for (std::uint64_t seed : config.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto acq = acquire(scene, config, full, arm_noise(arm, seed));
      const auto out =
          correct_zsp(acq.maps.ipf, full, inpaint_options(config, 1.0, MapKind::ipf, seed));
      const double elapsed = seconds_since(t0);
      for (bool corrected : {false, true}) {
        ResultRow r = base_row("zsp", seed, arm, acq.measured_snr_db);
        r.map = MapKind::ipf;
        r.zsp_correction = corrected;
        r.hit_rate = acq.maps.hit_rate;
        r.hit_rate_sampled = acq.maps.hit_rate_sampled;
        r.effective_rate = corrected ? effective_rate(out.corrected_mask) : 1.0;
        const RgbMap& m = corrected ? out.corrected : out.uncorrected;
        r.normalized_error = normalized_error(scene.ipf_reference, m);
        r.ssim = ssim(scene.ipf_reference, m, config.ssim);
        r.wall_time_s = elapsed;
        rows.push_back(r);
      }
      const std::string stem = "zsp/" + arm_tag(arm) + "_seed" + std::to_string(seed);
      emit_rgb(config, stem + "_indexed", acq.maps.ipf, seed);
      emit_rgb(config, stem + "_corrected", out.corrected, seed);
      emit_rgb(config, stem + "_uncorrected", out.uncorrected, seed);
    }
  }
  emit_csv(config, "zsp.csv", rows);
  return rows;
}

std::vector<ResultRow> run_subsampling_sweep(const ExperimentConfig& config) {
  config.validate();
  const Scene scene = make_scene(config);
  const ProbeGrid grid = scene.grains.grid();
  std::vector<ResultRow> rows;
  for (const auto& arm : noise_arms(config, true)) {
    for (std::uint64_t seed : config.seeds) {
      const auto t_arm = std::chrono::steady_clock::now();
      const auto acq = acquire(scene, config, SampleMask::full(grid), arm_noise(arm, seed));
      const double acquire_time = seconds_since(t_arm);
      for (std::size_t ri = 0; ri < config.rates.size(); ++ri) {
        const double rate = config.rates[ri];
        const SampleMask mask =
            make_mask(config.strategy, grid, rate, derive_seed(seed, 0x3a5c0000ULL + ri));
        const IndexedMaps maps = restrict_to(acq.maps, mask);
        for (MapKind kind : config.map_kinds) {
          const auto t0 = std::chrono::steady_clock::now();
          const bool correct = kind == MapKind::band_contrast ? config.zsp_correction_bc
                                                              : config.zsp_correction_ipf;
          const SampleMask& used = correct ? maps.mask : mask;
          const auto opts = inpaint_options(config, rate, kind, seed);
          ResultRow r = base_row("sweep", seed, arm, acq.measured_snr_db);
          r.map = kind;
          r.rate = rate;
          r.zsp_correction = correct;
          r.effective_rate = effective_rate(used);
          r.hit_rate = maps.hit_rate;
          r.hit_rate_sampled = maps.hit_rate_sampled;
          const std::string stem = "sweep/" + to_string(kind) + "_" + arm_tag(arm) + "_rate" +
                                   short_num(rate * 100.0) + "_seed" + std::to_string(seed);
          if (kind == MapKind::band_contrast) {
            const ScalarMap out = inpaint(maps.band_contrast, used, opts);
            r.normalized_error = normalized_error(scene.bc_reference, out);
            r.ssim = ssim(scene.bc_reference, out, config.ssim);
            emit_scalar(config, stem, out, seed);
          } else {
            const RgbMap out = inpaint(maps.ipf, used, opts);
            r.normalized_error = normalized_error(scene.ipf_reference, out);
            r.ssim = ssim(scene.ipf_reference, out, config.ssim);
            emit_rgb(config, stem, out, seed);
          }
          if (!config.output_dir.empty() && config.write_maps) {
            write_mask(config.output_dir / (stem + "_mask.json"), used);
          }
          r.wall_time_s = seconds_since(t0) + acquire_time;
          rows.push_back(r);
        }
      }
    }
  }
  emit_csv(config, "sweep.csv", rows);
  return rows;
}

}  // namespace cebsd
