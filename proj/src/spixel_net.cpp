#include "gridpix/spixel_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "gridpix/adam.hpp"
#include "gridpix/checkpoint.hpp"
#include "gridpix/kernels.hpp"
#include "gridpix/losses.hpp"
#include "gridpix/sampling.hpp"
#include "gridpix/slic.hpp"

namespace gridpix {

NetworkSpec NetworkSpec::table5() {
  using K = LayerSpec::Kind;
  auto conv = [](const char* name, int stride, int in, int out, const char* src,
                 const char* skip = "") {
    return LayerSpec{name, K::Conv, 3, stride, in, out, src, skip};
  };
  auto up = [](const char* name, int in, int out, const char* src) {
    return LayerSpec{name, K::TConv, 4, 2, in, out, src, ""};
  };
  NetworkSpec s;
  s.layers = {
      conv("cnv0a", 1, 3, 16, "image"),
      conv("cnv0b", 1, 16, 16, "cnv0a"),
      conv("cnv1a", 2, 16, 32, "cnv0b"),
      conv("cnv1b", 1, 32, 32, "cnv1a"),
      conv("cnv2a", 2, 32, 64, "cnv1b"),
      conv("cnv2b", 1, 64, 64, "cnv2a"),
      conv("cnv3a", 2, 64, 128, "cnv2b"),
      conv("cnv3b", 1, 128, 128, "cnv3a"),
      conv("cnv4a", 2, 128, 256, "cnv3b"),
      conv("cnv4b", 1, 256, 256, "cnv4a"),
      up("upcnv3", 256, 128, "cnv4b"),
      conv("icnv3", 1, 256, 128, "upcnv3", "cnv3b"),
      up("upcnv2", 128, 64, "icnv3"),
      conv("icnv2", 1, 128, 64, "upcnv2", "cnv2b"),
      up("upcnv1", 64, 32, "icnv2"),
      conv("icnv1", 1, 64, 32, "upcnv1", "cnv1b"),
      up("upcnv0", 32, 16, "icnv1"),
      conv("icnv0", 1, 32, 16, "upcnv0", "cnv0b"),
      LayerSpec{"assoc", K::Predict, 3, 1, 16, 9, "icnv0", ""},
  };
  return s;
}

nlohmann::json NetworkSpec::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layers) {
    arr.push_back({{"name", l.name},
                   {"kind", l.kind == LayerSpec::Kind::Conv     ? "conv"
                            : l.kind == LayerSpec::Kind::TConv ? "tconv"
                                                               : "predict"},
                   {"kernel", l.kernel},
                   {"stride", l.stride},
                   {"in", l.in_ch},
                   {"out", l.out_ch},
                   {"input", l.input},
                   {"skip", l.skip}});
  }
  return arr;
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  NetworkSpec s;
  for (const auto& e : j) {
    LayerSpec l;
    l.name = e.at("name").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "conv")
      l.kind = LayerSpec::Kind::Conv;
    else if (kind == "tconv")
      l.kind = LayerSpec::Kind::TConv;
    else if (kind == "predict")
      l.kind = LayerSpec::Kind::Predict;
    else
      throw std::runtime_error("NetworkSpec: unknown layer kind " + kind);
    l.kernel = e.at("kernel").get<int>();
    l.stride = e.at("stride").get<int>();
    l.in_ch = e.at("in").get<int>();
    l.out_ch = e.at("out").get<int>();
    l.input = e.at("input").get<std::string>();
    l.skip = e.value("skip", "");
    s.layers.push_back(std::move(l));
  }
  return s;
}

std::map<std::string, std::array<int, 3>> simulate_shapes(const NetworkSpec& spec,
                                                          int h, int w) {
  std::map<std::string, std::array<int, 3>> shapes;
  shapes["image"] = {3, h, w};
  for (const auto& l : spec.layers) {
    auto it = shapes.find(l.input);
    if (it == shapes.end())
      throw std::invalid_argument("network spec: unknown input '" + l.input +
                                  "' for layer " + l.name);
    std::array<int, 3> in = it->second;
    if (!l.skip.empty()) {
      auto st = shapes.find(l.skip);
      if (st == shapes.end())
        throw std::invalid_argument("network spec: unknown skip '" + l.skip +
                                    "' for layer " + l.name);
      if (st->second[1] != in[1] || st->second[2] != in[2])
        throw std::invalid_argument("network spec: skip spatial mismatch at " +
                                    l.name);
      in[0] += st->second[0];
    }
    if (in[0] != l.in_ch)
      throw std::invalid_argument(
          "network spec: layer " + l.name + " expects " +
          std::to_string(l.in_ch) + " channels, receives " +
          std::to_string(in[0]));
    std::array<int, 3> out{l.out_ch, 0, 0};
    if (l.kind == LayerSpec::Kind::TConv) {
      out[1] = (in[1] - 1) * l.stride - 2 + l.kernel;  // padding 1
      out[2] = (in[2] - 1) * l.stride - 2 + l.kernel;
    } else {
      const int pad = (l.kernel - 1) / 2;
      out[1] = kernels::conv_out_extent(in[1], l.kernel, l.stride, pad, 1);
      out[2] = kernels::conv_out_extent(in[2], l.kernel, l.stride, pad, 1);
    }
    shapes[l.name] = out;
  }
  if (spec.layers.empty() ||
      spec.layers.back().kind != LayerSpec::Kind::Predict ||
      spec.layers.back().out_ch != 9)
    throw std::invalid_argument("network spec: must end in a 9-channel predict layer");
  return shapes;
}

SpixelNet::SpixelNet(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  simulate_shapes(spec_, 208, 208);  // rejects malformed specs up front
  init_params(seed);
}

void SpixelNet::init_params(std::uint64_t seed) {
  Rng rng(seed);
  layers_.clear();
  for (const auto& ls : spec_.layers) {
    Layer layer;
    layer.spec = ls;
    const bool tconv = ls.kind == LayerSpec::Kind::TConv;
    const std::vector<int> wshape =
        tconv ? std::vector<int>{ls.in_ch, ls.out_ch, ls.kernel, ls.kernel}
              : std::vector<int>{ls.out_ch, ls.in_ch, ls.kernel, ls.kernel};
    // Kaiming fan-in scaling for the 0.1-slope activations; deconv taps are
    // shared across stride^2 output phases
    double fan_in = static_cast<double>(ls.in_ch) * ls.kernel * ls.kernel;
    if (tconv) fan_in /= static_cast<double>(ls.stride) * ls.stride;
    const double stddev = std::sqrt(2.0 / ((1.0 + 0.01) * fan_in));
    Tensor w(wshape);
    for (auto& v : w.data) v = static_cast<float>(rng.normal() * stddev);
    layer.weight = ad::param(std::move(w), ls.name + ".weight");
    if (ls.kind == LayerSpec::Kind::Predict) {
      layer.bias = ad::param(Tensor({ls.out_ch}), ls.name + ".bias");
    } else {
      layer.gamma = ad::param(Tensor({ls.out_ch}, 1.0f), ls.name + ".bn.gamma");
      layer.beta = ad::param(Tensor({ls.out_ch}), ls.name + ".bn.beta");
      layer.bn = std::make_shared<ad::BNState>();
      layer.bn->running_mean = Tensor({ls.out_ch});
      layer.bn->running_var = Tensor({ls.out_ch}, 1.0f);
    }
    layers_.push_back(std::move(layer));
  }
}

ad::NodePtr SpixelNet::logits(ad::NodePtr image, bool training) {
  if (image->value.ndim() != 4 || image->value.dim(1) != 3)
    throw std::invalid_argument("SpixelNet: input must be [N,3,H,W]");
  std::map<std::string, ad::NodePtr> nodes;
  nodes["image"] = image;
  ad::NodePtr out;
  for (auto& layer : layers_) {
    const LayerSpec& ls = layer.spec;
    ad::NodePtr in = nodes.at(ls.input);
    if (!ls.skip.empty()) in = ad::concat_channels(in, nodes.at(ls.skip));
    ad::NodePtr y;
    if (ls.kind == LayerSpec::Kind::TConv) {
      y = ad::transposed_conv2d(in, layer.weight, nullptr, ls.stride, 1);
    } else {
      y = ad::conv2d(in, layer.weight, layer.bias, ls.stride, (ls.kernel - 1) / 2);
    }
    if (ls.kind != LayerSpec::Kind::Predict) {
      y = ad::batch_norm(y, layer.gamma, layer.beta, layer.bn.get(), bn_momentum,
                         bn_eps, training);
      y = ad::leaky_relu(y, 0.1f);
    }
    nodes[ls.name] = y;
    out = y;
  }
  return out;
}

AssociationMap SpixelNet::infer(const Tensor& image_hwc, int cell_size) {
  if (image_hwc.ndim() != 3 || image_hwc.dim(2) != 3)
    throw std::invalid_argument("infer: image must be [H,W,3]");
  const int h = image_hwc.dim(0), w = image_hwc.dim(1);
  if (h % 16 != 0 || w % 16 != 0)
    throw std::invalid_argument(
        "infer: input " + std::to_string(w) + "x" + std::to_string(h) +
        " is not divisible by 16; pad or resize the image first");
  GridSpec grid(h, w, cell_size);
  Tensor input({1, 3, h, w});
  const Tensor chw = chw_from_hwc(image_hwc);
  for (int c = 0; c < 3; ++c) {
    const float mean = channel_means_[c];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i)
      input.data[c * plane + i] = chw.data[c * plane + i] - mean;
  }
  ad::NodePtr raw = logits(ad::constant(std::move(input)), false);
  ad::NodePtr q = ad::masked_softmax_channels(raw, validity_mask(grid));
  Tensor q_chw({9, h, w});
  std::copy(q->value.data.begin(), q->value.data.end(), q_chw.data.begin());
  return AssociationMap{hwc_from_chw(q_chw), grid};
}

std::vector<ad::NodePtr> SpixelNet::parameters() const {
  std::vector<ad::NodePtr> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    if (l.bias) out.push_back(l.bias);
    if (l.gamma) out.push_back(l.gamma);
    if (l.beta) out.push_back(l.beta);
  }
  return out;
}

void SpixelNet::save(const std::string& path,
                     const nlohmann::json& extra_meta) const {
  std::vector<CheckpointEntry> entries;
  for (const auto& l : layers_) {
    entries.push_back({l.weight->name, l.weight->value});
    if (l.bias) entries.push_back({l.bias->name, l.bias->value});
    if (l.gamma) {
      entries.push_back({l.gamma->name, l.gamma->value});
      entries.push_back({l.beta->name, l.beta->value});
      entries.push_back({l.spec.name + ".bn.running_mean", l.bn->running_mean});
      entries.push_back({l.spec.name + ".bn.running_var", l.bn->running_var});
    }
  }
  nlohmann::json meta = extra_meta;
  meta["arch"] = spec_.to_json();
  meta["channel_means"] = channel_means_;
  meta["bn_momentum"] = bn_momentum;
  meta["bn_eps"] = bn_eps;
  save_checkpoint(path, entries, meta);
}

SpixelNet SpixelNet::load_checkpoint_file(const std::string& path,
                                          nlohmann::json* meta_out) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!ckpt.meta.contains("arch"))
    throw std::runtime_error("checkpoint: missing architecture metadata");
  SpixelNet net(NetworkSpec::from_json(ckpt.meta["arch"]), 0);
  auto assign = [&](ad::NodePtr p) {
    const Tensor& t = ckpt.find(p->name);
    if (!same_shape(t, p->value))
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
    p->value = t;
  };
  for (auto& l : net.layers_) {
    assign(l.weight);
    if (l.bias) assign(l.bias);
    if (l.gamma) {
      assign(l.gamma);
      assign(l.beta);
      l.bn->running_mean = ckpt.find(l.spec.name + ".bn.running_mean");
      l.bn->running_var = ckpt.find(l.spec.name + ".bn.running_var");
    }
  }
  if (ckpt.meta.contains("channel_means")) {
    auto m = ckpt.meta["channel_means"].get<std::vector<float>>();
    for (int c = 0; c < 3 && c < static_cast<int>(m.size()); ++c)
      net.channel_means_[c] = m[c];
  }
  if (ckpt.meta.contains("bn_momentum"))
    net.bn_momentum = ckpt.meta["bn_momentum"].get<float>();
  if (ckpt.meta.contains("bn_eps")) net.bn_eps = ckpt.meta["bn_eps"].get<float>();
  if (meta_out) *meta_out = ckpt.meta;
  return net;
}

namespace {

struct PreparedSample {
  Tensor image_hwc;  // [H,W,3], raw [0,1]
  Tensor lab_hwc;    // filled for SLIC training
  LabelMap labels;   // filled for semantic training
  bool has_labels = false;
};

// crop + optional flips, shared by image-like tensors
Tensor crop_flip(const Tensor& src, int oy, int ox, int ch, int cw, bool fh,
                 bool fv) {
  const int w = src.dim(1), c = src.dim(2);
  Tensor out({ch, cw, c});
  for (int y = 0; y < ch; ++y) {
    const int sy = oy + (fv ? ch - 1 - y : y);
    for (int x = 0; x < cw; ++x) {
      const int sx = ox + (fh ? cw - 1 - x : x);
      const float* s = src.ptr() + (static_cast<std::size_t>(sy) * w + sx) * c;
      float* d = out.ptr() + (static_cast<std::size_t>(y) * cw + x) * c;
      for (int i = 0; i < c; ++i) d[i] = s[i];
    }
  }
  return out;
}

LabelMap crop_flip_labels(const LabelMap& src, int oy, int ox, int ch, int cw,
                          bool fh, bool fv) {
  LabelMap out(ch, cw);
  out.n_labels = src.n_labels;
  for (int y = 0; y < ch; ++y) {
    const int sy = oy + (fv ? ch - 1 - y : y);
    for (int x = 0; x < cw; ++x) {
      const int sx = ox + (fh ? cw - 1 - x : x);
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

}  // namespace

TrainResult train(SpixelNet& net, const std::vector<TrainSample>& data,
                  const TrainConfig& cfg, const std::string& loss_csv_path) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.iterations < 1 || cfg.batch < 1)
    throw std::invalid_argument("train: need iterations >= 1 and batch >= 1");
  if (cfg.crop_h % 16 != 0 || cfg.crop_w % 16 != 0)
    throw std::invalid_argument("train: crop dimensions must be divisible by 16");

  std::vector<PreparedSample> samples;
  double mean_acc[3] = {0, 0, 0};
  std::size_t pix_count = 0;
  for (const auto& s : data) {
    if (s.image.ndim() != 3 || s.image.dim(2) != 3)
      throw std::invalid_argument("train: images must be [H,W,3]");
    if (s.image.dim(0) < cfg.crop_h || s.image.dim(1) < cfg.crop_w)
      throw std::invalid_argument("train: image smaller than the crop size");
    PreparedSample p;
    p.image_hwc = s.image;
    if (cfg.loss == LossKind::Semantic) {
      if (!s.labels)
        throw std::invalid_argument("train: semantic loss needs ground-truth labels");
      p.labels = *s.labels;
      p.has_labels = true;
    } else {
      p.lab_hwc = rgb_to_lab(s.image).values;
    }
    const std::size_t n = s.image.numel() / 3;
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) mean_acc[c] += s.image.data[i * 3 + c];
    pix_count += n;
    samples.push_back(std::move(p));
  }
  for (int c = 0; c < 3; ++c)
    net.channel_means()[c] = static_cast<float>(mean_acc[c] / pix_count);

  const GridSpec grid(cfg.crop_h, cfg.crop_w, cfg.cell_size);
  const Tensor mask = validity_mask(grid);
  const int halve_at = (2 * cfg.iterations) / 3;

  Rng rng(cfg.seed);
  auto params = net.parameters();
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam adam(params, adam_cfg);

  LossConfig loss_cfg;
  loss_cfg.m = cfg.m;
  loss_cfg.reduction = LossReduction::MeanPerPixel;

  std::FILE* csv = nullptr;
  if (!loss_csv_path.empty()) {
    csv = std::fopen(loss_csv_path.c_str(), "w");
    if (!csv) throw std::runtime_error("train: cannot write " + loss_csv_path);
    std::fprintf(csv, "iteration,loss,property_term,position_term\n");
  }

  TrainResult result;
  const int B = cfg.batch;
  const std::size_t plane = static_cast<std::size_t>(cfg.crop_h) * cfg.crop_w;
  for (int it = 1; it <= cfg.iterations; ++it) {
    adam.set_lr(it > halve_at ? cfg.lr * 0.5 : cfg.lr);

    Tensor batch({B, 3, cfg.crop_h, cfg.crop_w});
    std::vector<LabelMap> batch_labels(B);
    Tensor feat;  // SLIC: [B,3,H,W] lab features
    if (cfg.loss == LossKind::Slic) feat = Tensor({B, 3, cfg.crop_h, cfg.crop_w});
    int max_classes = 0;
    for (int b = 0; b < B; ++b) {
      const int idx = rng.uniform_int(0, static_cast<int>(samples.size()) - 1);
      const PreparedSample& s = samples[idx];
      const int oy = rng.uniform_int(0, s.image_hwc.dim(0) - cfg.crop_h);
      const int ox = rng.uniform_int(0, s.image_hwc.dim(1) - cfg.crop_w);
      const bool fh = cfg.augment_flips && rng.coin();
      const bool fv = cfg.augment_flips && rng.coin();
      Tensor img = crop_flip(s.image_hwc, oy, ox, cfg.crop_h, cfg.crop_w, fh, fv);
      const Tensor img_chw = chw_from_hwc(img);
      for (int c = 0; c < 3; ++c) {
        const float mean = net.channel_means()[c];
        float* dst = batch.ptr() + (static_cast<std::size_t>(b) * 3 + c) * plane;
        const float* src = img_chw.ptr() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] - mean;
      }
      if (cfg.loss == LossKind::Semantic) {
        batch_labels[b] =
            crop_flip_labels(s.labels, oy, ox, cfg.crop_h, cfg.crop_w, fh, fv);
        for (std::int32_t v : batch_labels[b].labels)
          max_classes = std::max(max_classes, v + 1);
      } else {
        const Tensor lab = crop_flip(s.lab_hwc, oy, ox, cfg.crop_h, cfg.crop_w, fh, fv);
        const Tensor lab_chw = chw_from_hwc(lab);
        std::copy(lab_chw.data.begin(), lab_chw.data.end(),
                  feat.data.begin() + static_cast<std::size_t>(b) * 3 * plane);
      }
    }

    ad::NodePtr q = ad::masked_softmax_channels(
        net.logits(ad::constant(std::move(batch)), true), mask);
    LossTerms terms;
    if (cfg.loss == LossKind::Semantic) {
      // zero-padded one-hot channels are inert in the cross-entropy
      Tensor onehot({B, max_classes, cfg.crop_h, cfg.crop_w});
      for (int b = 0; b < B; ++b)
        for (std::size_t i = 0; i < plane; ++i)
          onehot.data[(static_cast<std::size_t>(b) * max_classes +
                       batch_labels[b].labels[i]) *
                          plane +
                      i] = 1.0f;
      terms = general_loss(q, ad::constant(std::move(onehot)), grid,
                           DistanceKind::CrossEntropy, loss_cfg);
    } else {
      terms = general_loss(q, ad::constant(std::move(feat)), grid,
                           DistanceKind::L2, loss_cfg);
    }

    for (auto& p : params) p->grad = Tensor();
    ad::backward(terms.total);
    adam.step();

    TrainRow row{it, terms.total->value.data[0], terms.property->value.data[0],
                 terms.position->value.data[0]};
    result.history.push_back(row);
    if (csv)
      std::fprintf(csv, "%d,%.9g,%.9g,%.9g\n", row.iteration, row.loss,
                   row.property, row.position);
  }
  if (csv) std::fclose(csv);
  return result;
}

ResizePlan plan_resize_for_count(int h, int w, int cell_size, int desired_n) {
  if (desired_n < 4)
    throw std::invalid_argument("plan_resize_for_count: need desired_n >= 4");
  const double ideal =
      std::sqrt(static_cast<double>(desired_n) * cell_size * cell_size /
                (static_cast<double>(h) * w));
  if (ideal > 4.0)
    throw std::invalid_argument(
        "plan_resize_for_count: desired count needs more than a 4x upscale; "
        "reduce the count or supply a larger image");

  auto grid_count = [cell_size](int hh, int ww) {
    const int gh = (hh + cell_size - 1) / cell_size;
    const int gw = (ww + cell_size - 1) / cell_size;
    return gh * gw;
  };

  // candidates realizable by a uniform scale with both dims rounded to /16
  const int ia = std::max(1, static_cast<int>(std::lround(ideal * h / 16.0)));
  ResizePlan best;
  long best_diff = -1;
  for (int a = std::max(1, ia - 3); a <= ia + 3; ++a) {
    const double glo = (16.0 * a - 8.0) / h;
    const double ghi = (16.0 * a + 8.0) / h;
    int blo = std::max(1, static_cast<int>(std::floor(glo * w / 16.0 + 0.5)));
    int bhi = std::max(1, static_cast<int>(std::floor((ghi - 1e-9) * w / 16.0 + 0.5)));
    for (int b = blo; b <= bhi; ++b) {
      const int hh = 16 * a, ww = 16 * b;
      const long diff = std::labs(static_cast<long>(grid_count(hh, ww)) - desired_n);
      const bool better =
          best_diff < 0 || diff < best_diff ||
          (diff == best_diff &&
           static_cast<long>(hh) * ww < static_cast<long>(best.dst_h) * best.dst_w);
      if (better) {
        best = ResizePlan{h, w, hh, ww};
        best_diff = diff;
      }
    }
  }
  if (best_diff < 0)
    throw std::runtime_error("plan_resize_for_count: no feasible size found");
  return best;
}

std::pair<AssociationMap, ResizePlan> infer_with_count(SpixelNet& net,
                                                       const Tensor& image_hwc,
                                                       int desired_n,
                                                       int cell_size) {
  const ResizePlan plan = plan_resize_for_count(image_hwc.dim(0), image_hwc.dim(1),
                                                cell_size, desired_n);
  const Tensor input = plan.identity()
                           ? image_hwc
                           : bilinear_resize(image_hwc, plan.dst_h, plan.dst_w);
  return {net.infer(input, cell_size), plan};
}

LabelMap map_labels_to_original(const LabelMap& labels, const ResizePlan& plan) {
  if (labels.h != plan.dst_h || labels.w != plan.dst_w)
    throw std::invalid_argument("map_labels_to_original: plan/label mismatch");
  if (plan.identity()) return labels;
  LabelMap out(plan.src_h, plan.src_w);
  out.n_labels = labels.n_labels;
  for (int y = 0; y < plan.src_h; ++y) {
    const int sy = std::min(plan.dst_h - 1,
                            static_cast<int>((y + 0.5) * plan.dst_h / plan.src_h));
    for (int x = 0; x < plan.src_w; ++x) {
      const int sx = std::min(plan.dst_w - 1,
                              static_cast<int>((x + 0.5) * plan.dst_w / plan.src_w));
      out.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

}  // namespace gridpix
