#include "gridpix/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gridpix {

namespace {
constexpr char kMagic[8] = {'G', 'P', 'X', 'C', 'K', 'P', 'T', '1'};

void write_u64_le(std::ofstream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::ifstream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}
}  // namespace

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e.tensor;
  throw std::runtime_error("checkpoint: missing entry '" + name + "'");
}

void save_checkpoint(const std::string& path,
                     const std::vector<CheckpointEntry>& entries,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["meta"] = meta;
  header["params"] = nlohmann::json::array();
  for (const auto& e : entries)
    header["params"].push_back({{"name", e.name}, {"shape", e.tensor.shape}});
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMagic, 8);
  write_u64_le(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& e : entries) {
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(e.tensor.ptr()),
             static_cast<std::streamsize>(e.tensor.numel() * 4));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic (not a GPXCKPT1 file): " + path);
  const std::uint64_t hlen = read_u64_le(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded() || !header.contains("params"))
    throw std::runtime_error("checkpoint: malformed header JSON");

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& p : header["params"]) {
    CheckpointEntry e;
    e.name = p.at("name").get<std::string>();
    const std::vector<int> shape = p.at("shape").get<std::vector<int>>();
    e.tensor = Tensor(shape);
    is.read(reinterpret_cast<char*>(e.tensor.ptr()),
            static_cast<std::streamsize>(e.tensor.numel() * 4));
    if (!is)
      throw std::runtime_error("checkpoint: truncated buffer for '" + e.name + "'");
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

}  // namespace gridpix
