// cebsd: command line front end to the compressive EBSD simulation pipeline.
//
// Every subcommand prints a one-line JSON summary on success. Failures print a single
// JSON line {"error": {"type": ..., "message": ...}} on stderr and exit nonzero
// (2 for usage errors, 1 otherwise).

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cebsd/bpfa.hpp"
#include "cebsd/indexing.hpp"
#include "cebsd/io.hpp"
#include "cebsd/metrics.hpp"
#include "cebsd/noise.hpp"
#include "cebsd/phantom.hpp"
#include "cebsd/pipeline.hpp"
#include "cebsd/sampling.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cebsd;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  std::string config;
};

void print_error(const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << std::endl;
}

void print_result(const json& j) { std::cout << j.dump() << std::endl; }

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c;
  if (!g.config.empty()) c = config_from_json(read_text(g.config));
  if (g.threads) c.threads = *g.threads;
  return c;
}

const std::string& require_out(const Globals& g) {
  if (g.out.empty()) throw std::invalid_argument("--out is required for this command");
  return g.out;
}

std::string mask_path_for(const std::string& stack) { return stack + ".mask.json"; }

bool is_ppm(const fs::path& p) { return p.extension() == ".ppm"; }

GrainMap phantom_from(const ExperimentConfig& c) {
  return voronoi_phantom(ProbeGrid(c.phantom.height, c.phantom.width), c.phantom.grains,
                         c.phantom.seed);
}

// --- phantom ---------------------------------------------------------------

struct PhantomOpts {
  std::optional<std::size_t> height, width, grains;
  std::optional<double> boundary_contrast;
};

void apply(const PhantomOpts& o, const Globals& g, ExperimentConfig& c) {
  if (o.height) c.phantom.height = *o.height;
  if (o.width) c.phantom.width = *o.width;
  if (o.grains) c.phantom.grains = *o.grains;
  if (o.boundary_contrast) c.phantom.pattern.boundary_contrast = *o.boundary_contrast;
  if (g.seed) c.phantom.seed = *g.seed;
}

void add_phantom_flags(CLI::App* sub, PhantomOpts& o) {
  sub->add_option("--height", o.height, "Probe grid rows");
  sub->add_option("--width", o.width, "Probe grid columns");
  sub->add_option("--grains", o.grains, "Number of Voronoi grains");
  sub->add_option("--boundary-contrast", o.boundary_contrast,
                  "Band-contrast value on grain boundaries, in [0, 1]");
}

void cmd_phantom(const Globals& g, const PhantomOpts& o) {
  auto c = load_config(g);
  apply(o, g, c);
  const fs::path dir = require_out(g);
  const auto gm = phantom_from(c);
  const auto maps = phantom_maps(gm, c.phantom.pattern.boundary_contrast);
  const auto norm = normalize_map(maps.band_contrast, 0.0, 255.0);
  const std::string prov = json{{"phantom_seed", c.phantom.seed}}.dump();
  write_pgm(dir / "bc.pgm", norm.map);
  write_sidecar(dir / "bc.json", &norm.record, prov);
  write_ppm(dir / "ipf.ppm", maps.ipf);
  write_sidecar(dir / "ipf.json", nullptr, prov);
  std::size_t boundary = 0;
  for (bool b : boundary_flags(gm)) boundary += b;
  print_result({{"height", c.phantom.height},
                {"width", c.phantom.width},
                {"grains", gm.grain_count()},
                {"boundary_pixels", boundary},
                {"out", dir.string()}});
}

// --- mask ------------------------------------------------------------------

struct MaskOpts {
  PhantomOpts grid;
  std::string strategy = "uds";
  double rate = 0.1;
};

void cmd_mask(const Globals& g, const MaskOpts& o) {
  auto c = load_config(g);
  apply(o.grid, {}, c);
  const ProbeGrid grid(c.phantom.height, c.phantom.width);
  const auto mask =
      make_mask(parse_sampling_strategy(o.strategy), grid, o.rate, g.seed.value_or(0));
  write_mask(require_out(g), mask);
  print_result({{"sampled", mask.sampled_count()},
                {"effective_rate", effective_rate(mask)},
                {"out", g.out}});
}

// --- synth / noise ---------------------------------------------------------

struct SynthOpts {
  PhantomOpts phantom;
  std::string mask;
};

void cmd_synth(const Globals& g, const SynthOpts& o) {
  auto c = load_config(g);
  apply(o.phantom, g, c);
  const auto gm = phantom_from(c);
  const SampleMask mask = o.mask.empty() ? SampleMask::full(gm.grid()) : read_mask(o.mask);
  const auto stack = synth_stack(gm, mask, c.phantom.pattern, c.threads);
  const std::string out = require_out(g);
  write_stack(out, stack);
  write_mask(mask_path_for(out), mask);
  print_result({{"patterns", stack.patterns.size()},
                {"pattern_height", stack.pattern_height},
                {"pattern_width", stack.pattern_width},
                {"out", out}});
}

struct NoiseOpts {
  std::string stack, mask, kind = "gaussian";
  double snr_db = 5.0;
  bool counts = false;
};

void cmd_noise(const Globals& g, const NoiseOpts& o) {
  const SampleMask mask = read_mask(o.mask.empty() ? mask_path_for(o.stack) : o.mask);
  PatternStack stack = read_stack(o.stack, mask);
  const NoiseSpec spec{parse_noise_kind(o.kind), o.snr_db, g.seed.value_or(0)};
  double snr_sum = 0.0;
  const auto sampled = mask.sampled();
  for (std::size_t i = 0; i < stack.patterns.size(); ++i) {
    const Pattern& p = stack.patterns[i];
    const auto y = p.intensities();
    auto noisy = corrupt(y, spec.for_stream(sampled[i]));
    snr_sum += noisy.snr_db();
    if (spec.kind == NoiseKind::poisson && !o.counts) {
      double l1 = 0.0;
      for (double v : y) l1 += v;
      const double gain = poisson_scale(y, o.snr_db) / l1;
      for (double& v : noisy.values) v /= gain;
    }
    stack.patterns[i] = Pattern(p.height(), p.width(), std::move(noisy.values));
  }
  const std::string out = require_out(g);
  write_stack(out, stack);
  write_mask(mask_path_for(out), mask);
  const double n = static_cast<double>(stack.patterns.size());
  json r{{"patterns", stack.patterns.size()}, {"out", out}};
  if (spec.kind != NoiseKind::none && n > 0) r["measured_snr_db"] = snr_sum / n;
  print_result(r);
}

// --- index -----------------------------------------------------------------

struct IndexOpts {
  PhantomOpts phantom;
  std::string stack, mask;
};

void cmd_index(const Globals& g, const IndexOpts& o) {
  auto c = load_config(g);
  apply(o.phantom, g, c);
  const SampleMask mask = read_mask(o.mask.empty() ? mask_path_for(o.stack) : o.mask);
  const PatternStack stack = read_stack(o.stack, mask);
  const auto gm = phantom_from(c);
  const auto ors = gm.orientations();
  const auto library = build_library(std::vector<Orientation>(ors.begin(), ors.end()),
                                     c.phantom.pattern, c.indexing);
  const auto maps = index_stack(stack, library, c.indexing, c.threads);
  const fs::path dir = require_out(g);
  const auto norm = normalize_map(maps.band_contrast, 0.0, 255.0);
  write_pgm(dir / "bc.pgm", norm.map);
  write_sidecar(dir / "bc.json", &norm.record, "{}");
  write_ppm(dir / "ipf.ppm", maps.ipf);
  write_mask(dir / "mask.json", maps.mask);
  print_result({{"hit_rate", maps.hit_rate},
                {"hit_rate_sampled", maps.hit_rate_sampled},
                {"zsp", maps.zsp.size()},
                {"out", dir.string()}});
}

// --- inpaint ---------------------------------------------------------------

struct InpaintOpts {
  std::string input, mask, patch;
  std::optional<double> rate;
  std::optional<bool> correct_zsp;
  bool reimpose = false;
};

PatchShape parse_patch(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw std::invalid_argument("--patch must look like 6x6");
  return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
}

/// Acquisition mask: probes recorded as zero solutions count as sampled.
SampleMask acquired(const SampleMask& m) {
  std::vector<std::size_t> all(m.sampled().begin(), m.sampled().end());
  all.insert(all.end(), m.zsp().begin(), m.zsp().end());
  std::sort(all.begin(), all.end());
  return SampleMask(m.grid(), std::move(all));
}

/// Recorded zero solutions plus any sampled pixel that is zero in every channel.
template <std::size_t C>
std::vector<std::size_t> zsp_of(const ChannelMap<C>& map, const SampleMask& given,
                                const SampleMask& base) {
  auto found = detect_zsp(map, base);
  found.insert(found.end(), given.zsp().begin(), given.zsp().end());
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  return found;
}

void cmd_inpaint(const Globals& g, const InpaintOpts& o) {
  const auto c = load_config(g);
  const bool rgb = is_ppm(o.input);
  const MapKind kind = rgb ? MapKind::ipf : MapKind::band_contrast;
  const SampleMask given = read_mask(o.mask);
  const SampleMask base = acquired(given);
  const bool correct = o.correct_zsp.value_or(rgb ? c.zsp_correction_ipf : c.zsp_correction_bc);
  const double rate = o.rate.value_or(effective_rate(base));
  InpaintOptions opts = inpaint_options(c, rate, kind, g.seed.value_or(0));
  if (!o.patch.empty()) opts.patch = parse_patch(o.patch);
  opts.reimpose_observed = o.reimpose;
  const std::string out = require_out(g);
  std::size_t zsp = 0;
  SampleMask used = base;
  if (rgb) {
    const RgbMap in = read_ppm(o.input);
    if (correct) {
      const auto found = zsp_of(in, given, base);
      zsp = found.size();
      used = merge_zsp(base, found);
    }
    write_ppm(out, inpaint(in, used, opts));
  } else {
    const ScalarMap in = read_pgm(o.input);
    if (correct) {
      const auto found = zsp_of(in, given, base);
      zsp = found.size();
      used = merge_zsp(base, found);
    }
    write_pgm(out, inpaint(in, used, opts));
  }
  print_result({{"map", to_string(kind)},
                {"effective_rate", effective_rate(used)},
                {"patch", {opts.patch.height, opts.patch.width}},
                {"zsp", zsp},
                {"out", out}});
}

// --- metrics ---------------------------------------------------------------

struct MetricsOpts {
  std::string ref, est;
};

void cmd_metrics(const Globals& g, const MetricsOpts& o) {
  const auto c = load_config(g);
  if (is_ppm(o.ref) != is_ppm(o.est)) {
    throw std::invalid_argument("metrics: --ref and --est must both be PGM or both PPM");
  }
  double err = 0.0, s = 0.0;
  if (is_ppm(o.ref)) {
    const auto a = read_ppm(o.ref), b = read_ppm(o.est);
    err = normalized_error(a, b);
    s = ssim(a, b, c.ssim);
  } else {
    const auto a = read_pgm(o.ref), b = read_pgm(o.est);
    err = normalized_error(a, b);
    s = ssim(a, b, c.ssim);
  }
  print_result({{"normalized_error", err}, {"ssim", s}});
}

// --- experiments -----------------------------------------------------------

struct ExperimentOpts {
  std::vector<std::uint64_t> seeds;
  bool no_maps = false;
};

template <typename Runner>
void cmd_experiment(const Globals& g, const ExperimentOpts& o, const char* csv_name,
                    Runner run) {
  auto c = load_config(g);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (g.seed) c.seeds = {*g.seed};
  if (!g.out.empty()) c.output_dir = g.out;
  if (o.no_maps) c.write_maps = false;
  const auto rows = run(c);
  if (c.output_dir.empty()) {
    std::cout << to_csv(rows);
    return;
  }
  print_result({{"rows", rows.size()}, {"csv", (c.output_dir / csv_name).string()}});
}

void add_experiment_flags(CLI::App* sub, ExperimentOpts& o) {
  sub->add_option("--seeds", o.seeds, "Seed list (overrides the config)")->delimiter(',');
  sub->add_flag("--no-maps", o.no_maps, "Write only the CSV");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressive EBSD simulation: phantoms, patterns, noise, indexing, inpainting"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Run seed");
  app.add_option("--threads", g.threads, "Worker threads (0: hardware concurrency)");
  app.add_option("--out", g.out, "Output file or directory, depending on the command");
  app.add_option("--config", g.config, "Experiment configuration (JSON)")
      ->check(CLI::ExistingFile);

  PhantomOpts phantom;
  auto* s_phantom = app.add_subcommand("phantom", "Voronoi phantom and its reference maps");
  add_phantom_flags(s_phantom, phantom);

  MaskOpts mask;
  auto* s_mask = app.add_subcommand("mask", "Sampling mask (JSON)");
  add_phantom_flags(s_mask, mask.grid);
  s_mask->add_option("--strategy", mask.strategy, "uds or linehop")
      ->check(CLI::IsMember({"uds", "linehop"}));
  s_mask->add_option("--rate", mask.rate, "Sampling rate in (0, 1]");

  SynthOpts synth;
  auto* s_synth = app.add_subcommand("synth", "Render the pattern stack of a phantom");
  add_phantom_flags(s_synth, synth.phantom);
  s_synth->add_option("--mask", synth.mask, "Sampled probes (default: every probe)");

  NoiseOpts noise;
  auto* s_noise = app.add_subcommand("noise", "Corrupt a pattern stack at a target SNR");
  s_noise->add_option("--stack", noise.stack, "Input stack")->required();
  s_noise->add_option("--mask", noise.mask, "Companion mask (default: <stack>.mask.json)");
  s_noise->add_option("--kind", noise.kind, "gaussian or poisson")
      ->check(CLI::IsMember({"gaussian", "poisson"}));
  s_noise->add_option("--snr", noise.snr_db, "Target SNR in dB");
  s_noise->add_flag("--counts", noise.counts, "Keep Poisson output as raw counts");

  IndexOpts index;
  auto* s_index = app.add_subcommand("index", "Index a pattern stack into BC and IPF maps");
  add_phantom_flags(s_index, index.phantom);
  s_index->add_option("--stack", index.stack, "Input stack")->required();
  s_index->add_option("--mask", index.mask, "Companion mask (default: <stack>.mask.json)");

  InpaintOpts inpaint_o;
  auto* s_inpaint = app.add_subcommand("inpaint", "BPFA inpainting of a PGM or PPM map");
  s_inpaint->add_option("--input", inpaint_o.input, "Map to inpaint (.pgm or .ppm)")
      ->required()
      ->check(CLI::ExistingFile);
  s_inpaint->add_option("--mask", inpaint_o.mask, "Sampled probes")->required();
  s_inpaint->add_option("--rate", inpaint_o.rate,
                        "Rate used to pick the patch shape (default: the mask's)");
  s_inpaint->add_option("--patch", inpaint_o.patch, "Patch shape HxW (overrides --rate)");
  s_inpaint->add_flag("--correct-zsp,!--no-correct-zsp", inpaint_o.correct_zsp,
                      "Treat zero-valued sampled pixels as unsampled");
  s_inpaint->add_flag("--reimpose", inpaint_o.reimpose, "Put observed values back");

  MetricsOpts metrics;
  auto* s_metrics = app.add_subcommand("metrics", "Normalised error and SSIM of two maps");
  s_metrics->add_option("--ref", metrics.ref, "Reference map")->required();
  s_metrics->add_option("--est", metrics.est, "Estimate")->required();

  ExperimentOpts sweep, zsp, robust;
  auto* s_sweep = app.add_subcommand("sweep", "Subsampling sweep (SSIM per rate)");
  add_experiment_flags(s_sweep, sweep);
  auto* s_zsp = app.add_subcommand("zsp-study", "Inpainting with and without ZSP correction");
  add_experiment_flags(s_zsp, zsp);
  auto* s_robust = app.add_subcommand("robustness", "Hit rate and error against SNR");
  add_experiment_flags(s_robust, robust);

  auto* s_config = app.add_subcommand("config", "Print the effective configuration as JSON");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (s_phantom->parsed()) cmd_phantom(g, phantom);
    if (s_mask->parsed()) cmd_mask(g, mask);
    if (s_synth->parsed()) cmd_synth(g, synth);
    if (s_noise->parsed()) cmd_noise(g, noise);
    if (s_index->parsed()) cmd_index(g, index);
    if (s_inpaint->parsed()) cmd_inpaint(g, inpaint_o);
    if (s_metrics->parsed()) cmd_metrics(g, metrics);
    if (s_sweep->parsed()) cmd_experiment(g, sweep, "sweep.csv", run_subsampling_sweep);
    if (s_zsp->parsed()) cmd_experiment(g, zsp, "zsp.csv", run_zsp_correction);
    if (s_robust->parsed()) cmd_experiment(g, robust, "robustness.csv", run_indexing_robustness);
    if (s_config->parsed()) std::cout << config_to_json(load_config(g)) << std::endl;
  } catch (const ShapeError& e) {
    print_error("shape", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    print_error("invalid_argument", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 0;
}
