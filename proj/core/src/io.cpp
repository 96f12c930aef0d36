#include "cebsd/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cebsd {

using nlohmann::json;

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return in;
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
}

// Netpbm header: magic, width, height, maxval, separated by whitespace (comments allowed).
struct NetpbmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
};

NetpbmHeader read_netpbm_header(std::istream& in, const std::string& magic,
                                const std::filesystem::path& path) {
  auto token = [&]() {
    std::string t;
    while (in) {
      const int c = in.peek();
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    in >> t;
    return t;
  };
  if (token() != magic) throw std::runtime_error("'" + path.string() + "' is not " + magic);
  NetpbmHeader h;
  try {
    h.width = std::stoul(token());
    h.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw std::runtime_error("maxval");
  } catch (const std::exception&) {
    throw std::runtime_error("'" + path.string() + "': bad " + magic + " header");
  }
  in.get();  // single whitespace before the raster
  if (h.width == 0 || h.height == 0) {
    throw std::runtime_error("'" + path.string() + "': empty image");
  }
  return h;
}

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("stack file truncated");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

constexpr std::uint16_t kStackVersion = 1;

}  // namespace

void write_pgm(const std::filesystem::path& path, const ScalarMap& map) {
  auto out = open_out(path);
  out << "P5\n" << map.grid().width() << ' ' << map.grid().height() << "\n255\n";
  std::vector<unsigned char> raster(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) raster[i] = to_byte(map[i]);
  out.write(reinterpret_cast<const char*>(raster.data()),
            static_cast<std::streamsize>(raster.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

ScalarMap read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto h = read_netpbm_header(in, "P5", path);
  std::vector<unsigned char> raster(h.width * h.height);
  if (!in.read(reinterpret_cast<char*>(raster.data()),
               static_cast<std::streamsize>(raster.size()))) {
    throw std::runtime_error("'" + path.string() + "': truncated raster");
  }
  std::vector<double> values(raster.begin(), raster.end());
  return ScalarMap(ProbeGrid(h.height, h.width), std::move(values));
}

void write_ppm(const std::filesystem::path& path, const RgbMap& map) {
  auto out = open_out(path);
  out << "P6\n" << map.grid().width() << ' ' << map.grid().height() << "\n255\n";
  std::vector<unsigned char> raster(map.size() * 3);
  for (std::size_t i = 0; i < map.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) raster[i * 3 + c] = to_byte(255.0 * map.at(c, i));
  }
  out.write(reinterpret_cast<const char*>(raster.data()),
            static_cast<std::streamsize>(raster.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

RgbMap read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto h = read_netpbm_header(in, "P6", path);
  const std::size_t n = h.width * h.height;
  std::vector<unsigned char> raster(n * 3);
  if (!in.read(reinterpret_cast<char*>(raster.data()),
               static_cast<std::streamsize>(raster.size()))) {
    throw std::runtime_error("'" + path.string() + "': truncated raster");
  }
  std::array<std::vector<double>, 3> ch;
  for (std::size_t c = 0; c < 3; ++c) {
    ch[c].resize(n);
    for (std::size_t i = 0; i < n; ++i) ch[c][i] = raster[i * 3 + c] / 255.0;
  }
  return RgbMap(ProbeGrid(h.height, h.width), std::move(ch));
}

std::string mask_to_json(const SampleMask& mask) {
  json j;
  j["height"] = mask.grid().height();
  j["width"] = mask.grid().width();
  j["sampled"] = std::vector<std::size_t>(mask.sampled().begin(), mask.sampled().end());
  j["zsp"] = std::vector<std::size_t>(mask.zsp().begin(), mask.zsp().end());
  return j.dump();
}

SampleMask mask_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ProbeGrid grid(j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>());
    auto sampled = j.at("sampled").get<std::vector<std::size_t>>();
    std::vector<std::size_t> zsp;
    if (j.contains("zsp")) zsp = j.at("zsp").get<std::vector<std::size_t>>();
    return SampleMask(grid, std::move(sampled), std::move(zsp));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("bad mask JSON: ") + e.what());
  }
}

void write_mask(const std::filesystem::path& path, const SampleMask& mask) {
  write_text(path, mask_to_json(mask) + "\n");
}

SampleMask read_mask(const std::filesystem::path& path) { return mask_from_json(read_text(path)); }

void write_stack(const std::filesystem::path& path, const PatternStack& stack) {
  if (stack.patterns.size() != stack.mask.sampled_count()) {
    throw ShapeError("write_stack: pattern count does not match the mask");
  }
  auto out = open_out(path);
  out.write("EBCS", 4);
  put_le<std::uint16_t>(out, kStackVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.grid().height()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.grid().width()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.pattern_height));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.pattern_width));
  put_le<std::uint64_t>(out, stack.patterns.size());
  for (const auto& p : stack.patterns) {
    if (p.height() != stack.pattern_height || p.width() != stack.pattern_width) {
      throw ShapeError("write_stack: pattern size differs from the stack header");
    }
    for (double v : p.intensities()) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

PatternStack read_stack(const std::filesystem::path& path, const SampleMask& mask) {
  auto in = open_in(path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "EBCS", 4) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not a pattern stack");
  }
  const auto version = get_le<std::uint16_t>(in);
  if (version != kStackVersion) {
    throw std::runtime_error("'" + path.string() + "': unsupported stack version " +
                             std::to_string(version));
  }
  const std::size_t hp = get_le<std::uint32_t>(in);
  const std::size_t wp = get_le<std::uint32_t>(in);
  const std::size_t hd = get_le<std::uint32_t>(in);
  const std::size_t wd = get_le<std::uint32_t>(in);
  const std::size_t count = get_le<std::uint64_t>(in);
  if (!(ProbeGrid(hp, wp) == mask.grid()) || count != mask.sampled_count()) {
    throw ShapeError("read_stack: header does not match the mask");
  }
  PatternStack stack{mask, hd, wd, {}};
  stack.patterns.reserve(count);
  std::vector<double> buf(hd * wd);
  for (std::size_t i = 0; i < count; ++i) {
    for (double& v : buf) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
    stack.patterns.emplace_back(hd, wd, buf);
  }
  return stack;
}

void write_sidecar(const std::filesystem::path& path, const NormalizationRecord* record,
                   const std::string& provenance_json) {
  json j;
  if (record) {
    j["normalization"] = {{"source_min", record->source_min},
                          {"source_max", record->source_max},
                          {"target_lo", record->target_lo},
                          {"target_hi", record->target_hi},
                          {"degenerate", record->degenerate},
                          {"length", record->length}};
  }
  j["provenance"] = provenance_json.empty() ? json::object() : json::parse(provenance_json);
  write_text(path, j.dump(2) + "\n");
}

NormalizationRecord read_sidecar_record(const std::filesystem::path& path) {
  try {
    const json j = json::parse(read_text(path)).at("normalization");
    NormalizationRecord r;
    r.source_min = j.at("source_min").get<double>();
    r.source_max = j.at("source_max").get<double>();
    r.target_lo = j.at("target_lo").get<double>();
    r.target_hi = j.at("target_hi").get<double>();
    r.degenerate = j.at("degenerate").get<bool>();
    r.length = j.at("length").get<std::size_t>();
    return r;
  } catch (const json::exception& e) {
    throw std::runtime_error("'" + path.string() + "': bad sidecar: " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace cebsd
