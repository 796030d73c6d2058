#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "gridpix/tensor.hpp"

namespace gridpix {

// Versioned binary checkpoint: 8-byte magic "GPXCKPT1", a u64 little-endian
// byte length, a UTF-8 JSON header listing parameter names/shapes (plus free-
// form metadata), then the raw little-endian float32 buffers in header order.
struct CheckpointEntry {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  nlohmann::json meta;

  const Tensor& find(const std::string& name) const;
};

void save_checkpoint(const std::string& path,
                     const std::vector<CheckpointEntry>& entries,
                     const nlohmann::json& meta);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace gridpix
