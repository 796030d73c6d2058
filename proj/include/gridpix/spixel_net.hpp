#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridpix/assoc.hpp"
#include "gridpix/ops.hpp"
#include "gridpix/rng.hpp"
#include "gridpix/segmentation.hpp"

namespace gridpix {

struct LayerSpec {
  enum class Kind { Conv, TConv, Predict };
  std::string name;
  Kind kind = Kind::Conv;
  int kernel = 3;
  int stride = 1;
  int in_ch = 0;
  int out_ch = 0;
  std::string input;  // producing layer, or "image"
  std::string skip;   // concatenated source, empty for none
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;

  // The encoder-decoder of the reference architecture: ten 3x3 conv layers
  // down to a /16 bottleneck, four 4x4 stride-2 deconv stages with skip
  // concatenations, and a 9-channel prediction head.
  static NetworkSpec table5();

  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);
};

// Per-layer output (channels, height, width) for a given input size; throws
// on inconsistent channel counts or skip shape mismatches.
std::map<std::string, std::array<int, 3>> simulate_shapes(const NetworkSpec& spec,
                                                          int h, int w);

class SpixelNet {
 public:
  SpixelNet(NetworkSpec spec, std::uint64_t seed);

  // Raw 9-channel association logits for a [N,3,H,W] input node.
  ad::NodePtr logits(ad::NodePtr image, bool training);

  // Eval-mode association map for one [H,W,3] image in [0,1]. H and W must
  // be divisible by 16 (four stride-2 stages).
  AssociationMap infer(const Tensor& image_hwc, int cell_size);

  std::vector<ad::NodePtr> parameters() const;
  const NetworkSpec& spec() const { return spec_; }
  std::array<float, 3>& channel_means() { return channel_means_; }
  const std::array<float, 3>& channel_means() const { return channel_means_; }

  void save(const std::string& path, const nlohmann::json& extra_meta) const;
  static SpixelNet load_checkpoint_file(const std::string& path,
                                        nlohmann::json* meta_out = nullptr);

  float bn_momentum = 0.1f;
  float bn_eps = 1e-5f;

 private:
  struct Layer {
    LayerSpec spec;
    ad::NodePtr weight;
    ad::NodePtr bias;   // prediction head only; batch norm absorbs the rest
    ad::NodePtr gamma;
    ad::NodePtr beta;
    std::shared_ptr<ad::BNState> bn;
  };

  void init_params(std::uint64_t seed);

  NetworkSpec spec_;
  std::vector<Layer> layers_;
  std::array<float, 3> channel_means_{0.0f, 0.0f, 0.0f};
};

enum class LossKind { Slic, Semantic };

struct TrainConfig {
  int cell_size = 16;
  int crop_h = 208;
  int crop_w = 208;
  int iterations = 300000;  // desk-scale callers pass far less
  double lr = 5e-5;         // halved at 2/3 of the run
  int batch = 8;
  LossKind loss = LossKind::Semantic;
  double m = 0.003;
  bool augment_flips = true;  // horizontal and vertical
  std::uint64_t seed = 0;
};

struct TrainSample {
  Tensor image;  // [H,W,3] in [0,1]
  std::optional<LabelMap> labels;
};

struct TrainRow {
  int iteration;
  double loss;
  double property;
  double position;
};

struct TrainResult {
  std::vector<TrainRow> history;
};

// Deterministic given cfg.seed. Writes "iteration,loss,property_term,
// position_term" rows to loss_csv_path when non-empty.
TrainResult train(SpixelNet& net, const std::vector<TrainSample>& data,
                  const TrainConfig& cfg, const std::string& loss_csv_path);

struct ResizePlan {
  int src_h = 0, src_w = 0;
  int dst_h = 0, dst_w = 0;
  bool identity() const { return src_h == dst_h && src_w == dst_w; }
};

// Uniform-scale resize rounded to multiples of 16 whose cell-grid product is
// the achievable superpixel count closest to desired_n.
ResizePlan plan_resize_for_count(int h, int w, int cell_size, int desired_n);

std::pair<AssociationMap, ResizePlan> infer_with_count(SpixelNet& net,
                                                       const Tensor& image_hwc,
                                                       int desired_n,
                                                       int cell_size);

// Nearest-neighbor mapping of labels at plan.dst back to plan.src resolution.
LabelMap map_labels_to_original(const LabelMap& labels, const ResizePlan& plan);

}  // namespace gridpix
