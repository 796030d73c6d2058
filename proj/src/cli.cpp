#include "gridpix/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "gridpix/gradcheck.hpp"
#include "gridpix/image_io.hpp"
#include "gridpix/losses.hpp"
#include "gridpix/metrics.hpp"
#include "gridpix/parallel.hpp"
#include "gridpix/sampling.hpp"
#include "gridpix/segmentation.hpp"
#include "gridpix/slic.hpp"
#include "gridpix/spixel_net.hpp"
#include "gridpix/synthetic.hpp"

namespace fs = std::filesystem;

namespace gridpix::cli {

namespace {

int cmd_train(const std::string& data, const std::string& loss,
              const std::string& out, double m, int cell_size, int iters,
              std::uint64_t seed, double lr, int batch, int crop,
              bool no_augment, std::string loss_log) {
  const auto entries = read_manifest(data);
  if (entries.empty()) throw std::runtime_error("train: empty manifest " + data);

  std::vector<TrainSample> samples;
  int min_h = 1 << 30, min_w = 1 << 30;
  for (const auto& e : entries) {
    TrainSample s;
    s.image = read_ppm(e.image_path);
    if (!e.label_path.empty()) s.labels = read_pgm16_labels(e.label_path);
    min_h = std::min(min_h, s.image.dim(0));
    min_w = std::min(min_w, s.image.dim(1));
    samples.push_back(std::move(s));
  }

  TrainConfig cfg;
  cfg.cell_size = cell_size;
  cfg.iterations = iters;
  cfg.seed = seed;
  cfg.lr = lr;
  cfg.batch = batch;
  cfg.m = m;
  cfg.augment_flips = !no_augment;
  if (loss == "slic")
    cfg.loss = LossKind::Slic;
  else if (loss == "sem")
    cfg.loss = LossKind::Semantic;
  else
    throw std::runtime_error("train: --loss must be 'slic' or 'sem'");
  if (crop <= 0) crop = std::min({208, min_h, min_w}) / 16 * 16;
  if (crop < 16) throw std::runtime_error("train: images too small to crop");
  cfg.crop_h = cfg.crop_w = crop;

  if (loss_log.empty()) loss_log = out + ".loss.csv";
  SpixelNet net(NetworkSpec::table5(), seed);
  const TrainResult res = train(net, samples, cfg, loss_log);
  nlohmann::json meta{{"cell_size", cfg.cell_size},
                      {"loss", loss},
                      {"m", cfg.m},
                      {"iterations", cfg.iterations},
                      {"seed", seed}};
  net.save(out, meta);
  std::printf("trained %d iterations on %zu samples; final loss %.6g\n",
              cfg.iterations, samples.size(), res.history.back().loss);
  std::printf("checkpoint: %s\nloss log: %s\n", out.c_str(), loss_log.c_str());
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& image_path, int nsp,
              const std::string& out, const std::string& overlay, int cell_flag) {
  nlohmann::json meta;
  SpixelNet net = SpixelNet::load_checkpoint_file(ckpt, &meta);
  const int cell = cell_flag > 0 ? cell_flag : meta.value("cell_size", 16);
  const Tensor image = read_ppm(image_path);

  AssociationMap assoc{Tensor(), GridSpec()};
  ResizePlan plan{image.dim(0), image.dim(1), image.dim(0), image.dim(1)};
  if (nsp > 0) {
    std::tie(assoc, plan) = infer_with_count(net, image, nsp, cell);
  } else {
    assoc = net.infer(image, cell);
  }
  const LabelMap hard = hard_assign(assoc);
  const LabelMap at_src = map_labels_to_original(hard, plan);
  const double cell_area = static_cast<double>(plan.src_h) * plan.src_w /
                           static_cast<double>(assoc.grid.cells());
  const LabelMap final_labels = enforce_connectivity(at_src, 0.25, cell_area);
  write_pgm16_labels(out, final_labels);
  if (!overlay.empty())
    write_ppm(overlay, overlay_boundaries(image, final_labels));
  std::printf("%s: %d superpixels -> %s\n", image_path.c_str(),
              final_labels.n_labels, out.c_str());
  return 0;
}

int cmd_slic(const std::string& image_path, int k, double m, int iters,
             const std::string& out) {
  const Tensor image = read_ppm(image_path);
  const LabImage lab = rgb_to_lab(image);
  const SlicResult res = slic(lab, k, m, iters);
  write_pgm16_labels(out, res.labels);
  std::printf("%s: %d seeds, %d superpixels -> %s\n", image_path.c_str(),
              res.n_seeds, res.labels.n_labels, out.c_str());
  return 0;
}

int cmd_sample_demo(std::uint64_t seed, const std::string& out,
                    const std::string& ckpt, const std::string& img_dir,
                    int count, int size, int cell) {
  std::optional<SpixelNet> net;
  if (!ckpt.empty()) net.emplace(SpixelNet::load_checkpoint_file(ckpt));
  if (!img_dir.empty()) fs::create_directories(img_dir);

  std::FILE* csv = std::fopen(out.c_str(), "w");
  if (!csv) throw std::runtime_error("sample-demo: cannot write " + out);
  std::fprintf(csv, "instance,eps_superpixel,eps_bilinear\n");

  Rng rng(seed);
  const GridSpec grid(size, size, cell);
  double sum_sp = 0.0, sum_bl = 0.0;
  int wins = 0;
  for (int i = 0; i < count; ++i) {
    const Mosaic mosaic = voronoi_mosaic(rng, size, size);
    const Tensor disparity = piecewise_constant_map(mosaic.regions, rng, 8.0, 56.0);
    const auto edges = label_edge_mask(mosaic.regions);

    const AssociationMap assoc = net ? net->infer(mosaic.image, cell)
                                     : soft_assoc_from_image(mosaic.image, grid);
    const Tensor up_sp = upsample(assoc, downsample(assoc, disparity));
    const Tensor up_bl =
        bilinear_upsample(cell_block_mean(disparity, grid), size, size);

    const double e_sp = edge_preservation_score(disparity, up_sp, edges);
    const double e_bl = edge_preservation_score(disparity, up_bl, edges);
    sum_sp += e_sp;
    sum_bl += e_bl;
    if (e_sp < e_bl) ++wins;
    std::fprintf(csv, "%d,%.9g,%.9g\n", i, e_sp, e_bl);

    if (!img_dir.empty()) {
      auto to_gray = [&](const Tensor& d) {
        Tensor img({size, size, 3});
        for (int p = 0; p < size * size; ++p) {
          const float v = std::min(1.0f, std::max(0.0f, d.data[p] / 64.0f));
          img.data[3 * p] = img.data[3 * p + 1] = img.data[3 * p + 2] = v;
        }
        return img;
      };
      char name[64];
      std::snprintf(name, sizeof(name), "%03d", i);
      write_ppm(img_dir + "/" + name + "_gt.ppm", to_gray(disparity));
      write_ppm(img_dir + "/" + name + "_superpixel.ppm", to_gray(up_sp));
      write_ppm(img_dir + "/" + name + "_bilinear.ppm", to_gray(up_bl));
    }
  }
  std::fprintf(csv, "\nmean,%.9g,%.9g\n", sum_sp / count, sum_bl / count);
  std::fclose(csv);
  std::printf("superpixel upsampling won %d/%d instances (csv: %s)\n", wins,
              count, out.c_str());
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto results = run_gradient_suite(seed);
  for (const auto& r : results)
    std::printf("%-24s max_rel_err=%.3e (n=%d)\n", r.name.c_str(), r.max_rel_err,
                r.checked);
  const bool ok = gradient_suite_passed(results, 1e-3);
  std::printf("gradcheck: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  par::init_from_env();

  CLI::App app{"gridpix: grid-constrained superpixel segmentation"};
  app.require_subcommand(1);
  std::function<int()> action;

  {
    auto* c = app.add_subcommand("train", "train the association network");
    auto data = std::make_shared<std::string>();
    auto loss = std::make_shared<std::string>("sem");
    auto out = std::make_shared<std::string>();
    auto m = std::make_shared<double>(0.003);
    auto cell = std::make_shared<int>(16);
    auto iters = std::make_shared<int>(1000);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto lr = std::make_shared<double>(5e-5);
    auto batch = std::make_shared<int>(8);
    auto crop = std::make_shared<int>(0);
    auto noaug = std::make_shared<bool>(false);
    auto losslog = std::make_shared<std::string>();
    c->add_option("--data", *data, "dataset manifest")->required();
    c->add_option("--loss", *loss, "slic|sem");
    c->add_option("--m", *m, "compactness weight");
    c->add_option("--cell-size", *cell, "grid cell size S");
    c->add_option("--iters", *iters, "training iterations");
    c->add_option("--seed", *seed, "rng seed");
    c->add_option("--out", *out, "output checkpoint")->required();
    c->add_option("--lr", *lr, "initial learning rate (halved at 2/3)");
    c->add_option("--batch", *batch, "batch size");
    c->add_option("--crop", *crop, "crop size (0 = fit to data, max 208)");
    c->add_flag("--no-augment", *noaug, "disable flip augmentation");
    c->add_option("--loss-log", *losslog, "loss CSV path (default <out>.loss.csv)");
    c->callback([=, &action] {
      action = [=] {
        return cmd_train(*data, *loss, *out, *m, *cell, *iters, *seed, *lr,
                         *batch, *crop, *noaug, *losslog);
      };
    });
  }
  {
    auto* c = app.add_subcommand("infer", "predict superpixels for an image");
    auto ckpt = std::make_shared<std::string>();
    auto image = std::make_shared<std::string>();
    auto nsp = std::make_shared<int>(0);
    auto out = std::make_shared<std::string>();
    auto overlay = std::make_shared<std::string>();
    auto cell = std::make_shared<int>(0);
    c->add_option("--ckpt", *ckpt, "checkpoint")->required();
    c->add_option("--image", *image, "input PPM image")->required();
    c->add_option("--nsp", *nsp, "desired superpixel count (0 = native grid)");
    c->add_option("--out", *out, "output 16-bit PGM label map")->required();
    c->add_option("--overlay", *overlay, "boundary overlay PPM");
    c->add_option("--cell-size", *cell, "override the checkpoint cell size");
    c->callback([=, &action] {
      action = [=] { return cmd_infer(*ckpt, *image, *nsp, *out, *overlay, *cell); };
    });
  }
  {
    auto* c = app.add_subcommand("eval", "score predictions against ground truth");
    auto pred = std::make_shared<std::string>();
    auto gt = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    c->add_option("--pred", *pred, "prediction directory (16-bit PGM)")->required();
    c->add_option("--gt", *gt, "ground-truth directory (16-bit PGM)")->required();
    c->add_option("--out", *out, "output CSV")->required();
    c->callback([=, &action] {
      action = [=] { return evaluate_directory(*pred, *gt, *out); };
    });
  }
  {
    auto* c = app.add_subcommand("slic", "classical SLIC baseline");
    auto image = std::make_shared<std::string>();
    auto k = std::make_shared<int>(100);
    auto m = std::make_shared<double>(10.0);
    auto iters = std::make_shared<int>(10);
    auto out = std::make_shared<std::string>();
    c->add_option("--image", *image, "input PPM image")->required();
    c->add_option("--k", *k, "superpixel count");
    c->add_option("--m", *m, "compactness");
    c->add_option("--iters", *iters, "iterations");
    c->add_option("--out", *out, "output 16-bit PGM label map")->required();
    c->callback([=, &action] {
      action = [=] { return cmd_slic(*image, *k, *m, *iters, *out); };
    });
  }
  {
    auto* c = app.add_subcommand(
        "sample-demo", "superpixel vs bilinear upsampling on synthetic volumes");
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<std::string>();
    auto ckpt = std::make_shared<std::string>();
    auto imgdir = std::make_shared<std::string>();
    auto count = std::make_shared<int>(50);
    auto size = std::make_shared<int>(64);
    auto cell = std::make_shared<int>(8);
    c->add_option("--seed", *seed, "rng seed");
    c->add_option("--out", *out, "output CSV")->required();
    c->add_option("--ckpt", *ckpt, "use a trained network for Q");
    c->add_option("--img-dir", *imgdir, "also write reconstructed images here");
    c->add_option("--count", *count, "number of instances");
    c->add_option("--size", *size, "image size");
    c->add_option("--cell", *cell, "grid cell size");
    c->callback([=, &action] {
      action = [=] {
        return cmd_sample_demo(*seed, *out, *ckpt, *imgdir, *count, *size, *cell);
      };
    });
  }
  {
    auto* c = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    auto seed = std::make_shared<std::uint64_t>(0);
    c->add_option("--seed", *seed, "rng seed");
    c->callback([=, &action] { action = [=] { return cmd_gradcheck(*seed); }; });
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    return action ? action() : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace gridpix::cli
