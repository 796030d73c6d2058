#pragma once

#include <string>
#include <vector>

#include "gridpix/segmentation.hpp"
#include "gridpix/tensor.hpp"

namespace gridpix {

// Binary PPM (P6, 8-bit). Values map to [0,1]; writing inverts the read
// exactly for in-range data.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image_hwc);

// Binary PGM (P5) with maxval 65535, one label id per pixel, big-endian
// sample order per the netpbm convention. Lossless up to 65536 labels.
LabelMap read_pgm16_labels(const std::string& path);
void write_pgm16_labels(const std::string& path, const LabelMap& labels);

struct ManifestEntry {
  std::string image_path;
  std::string label_path;  // empty when absent
};

// One "image_path<TAB>label_path" per line (label optional). All referenced
// files must exist.
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace gridpix
