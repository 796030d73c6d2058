#include "gridpix/image_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace gridpix {

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::istream& is,
                             const std::string& what) {
  const auto off = is.tellg();
  throw std::runtime_error("netpbm parse error in " + path + " at byte offset " +
                           std::to_string(static_cast<long long>(off)) + ": " + what);
}

// Reads the next header token, skipping whitespace and # comments.
std::string next_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int parse_int(std::istream& is, const std::string& path, const char* what) {
  const std::string tok = next_token(is);
  if (tok.empty()) parse_fail(path, is, std::string("missing ") + what);
  try {
    std::size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
    return v;
  } catch (...) {
    parse_fail(path, is, std::string("malformed ") + what + " '" + tok + "'");
  }
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image " + path);
  const std::string magic = next_token(is);
  if (magic != "P6") parse_fail(path, is, "expected magic P6, got '" + magic + "'");
  const int w = parse_int(is, path, "width");
  const int h = parse_int(is, path, "height");
  const int maxval = parse_int(is, path, "maxval");
  if (maxval != 255) parse_fail(path, is, "unsupported maxval (need 255)");
  // exactly one whitespace byte separates header and payload
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  std::vector<unsigned char> raw(need);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(need));
  const std::size_t got = static_cast<std::size_t>(is.gcount());
  if (got != need)
    throw std::runtime_error("truncated PPM payload in " + path + ": expected " +
                             std::to_string(need) + " bytes, got " +
                             std::to_string(got));
  Tensor out({h, w, 3});
  for (std::size_t i = 0; i < need; ++i)
    out.data[i] = static_cast<float>(raw[i]) / 255.0f;
  return out;
}

void write_ppm(const std::string& path, const Tensor& image_hwc) {
  if (image_hwc.ndim() != 3 || image_hwc.dim(2) != 3)
    throw std::invalid_argument("write_ppm: image must be [H,W,3]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write image " + path);
  const int h = image_hwc.dim(0), w = image_hwc.dim(1);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(image_hwc.numel());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, image_hwc.data[i]));
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
  if (!os) throw std::runtime_error("write failed for " + path);
}

LabelMap read_pgm16_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open labels " + path);
  const std::string magic = next_token(is);
  if (magic != "P5") parse_fail(path, is, "expected magic P5, got '" + magic + "'");
  const int w = parse_int(is, path, "width");
  const int h = parse_int(is, path, "height");
  const int maxval = parse_int(is, path, "maxval");
  if (maxval != 65535)
    parse_fail(path, is, "label maps require maxval 65535, got " +
                             std::to_string(maxval));
  const std::size_t need = static_cast<std::size_t>(w) * h * 2;
  std::vector<unsigned char> raw(need);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(need));
  if (static_cast<std::size_t>(is.gcount()) != need)
    throw std::runtime_error("truncated PGM payload in " + path + ": expected " +
                             std::to_string(need) + " bytes, got " +
                             std::to_string(is.gcount()));
  LabelMap out(h, w);
  std::int32_t maxlab = 0;
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const std::int32_t v = (static_cast<std::int32_t>(raw[2 * i]) << 8) |
                           static_cast<std::int32_t>(raw[2 * i + 1]);
    out.labels[i] = v;
    maxlab = std::max(maxlab, v);
  }
  out.n_labels = maxlab + 1;
  return out;
}

void write_pgm16_labels(const std::string& path, const LabelMap& labels) {
  for (std::int32_t v : labels.labels)
    if (v < 0 || v > 65535)
      throw std::invalid_argument(
          "write_pgm16_labels: label id " + std::to_string(v) +
          " outside the 16-bit range; compact the labels or split the map");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write labels " + path);
  os << "P5\n" << labels.w << " " << labels.h << "\n65535\n";
  std::vector<unsigned char> raw(labels.labels.size() * 2);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    raw[2 * i] = static_cast<unsigned char>((labels.labels[i] >> 8) & 0xff);
    raw[2 * i + 1] = static_cast<unsigned char>(labels.labels[i] & 0xff);
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
  if (!os) throw std::runtime_error("write failed for " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    ManifestEntry e;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      e.image_path = line;
    } else {
      e.image_path = line.substr(0, tab);
      e.label_path = line.substr(tab + 1);
    }
    if (!std::filesystem::exists(e.image_path))
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": missing image file " + e.image_path);
    if (!e.label_path.empty() && !std::filesystem::exists(e.label_path))
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": missing label file " + e.label_path);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace gridpix
