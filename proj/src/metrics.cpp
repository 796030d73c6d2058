#include "gridpix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "gridpix/image_io.hpp"

namespace fs = std::filesystem;

namespace gridpix {

namespace {

void require_same_dims(const LabelMap& a, const LabelMap& b, const char* op) {
  if (a.h != b.h || a.w != b.w)
    throw std::invalid_argument(std::string(op) + ": label map dimensions differ");
}

int distinct_labels(const LabelMap& m) {
  std::set<std::int32_t> s(m.labels.begin(), m.labels.end());
  return static_cast<int>(s.size());
}

}  // namespace

double asa(const LabelMap& pred, const LabelMap& gt) {
  require_same_dims(pred, gt, "asa");
  // contingency table over (pred label, gt label)
  std::map<std::pair<std::int32_t, std::int32_t>, long> table;
  for (std::size_t i = 0; i < pred.labels.size(); ++i)
    ++table[{pred.labels[i], gt.labels[i]}];
  std::map<std::int32_t, long> best;
  for (const auto& [key, count] : table) {
    auto it = best.find(key.first);
    if (it == best.end() || count > it->second) best[key.first] = count;
  }
  long hit = 0;
  for (const auto& [lab, count] : best) hit += count;
  return static_cast<double>(hit) / static_cast<double>(pred.labels.size());
}

int boundary_tolerance(int h, int w) {
  const double diag = std::sqrt(static_cast<double>(h) * h +
                                static_cast<double>(w) * w);
  return static_cast<int>(std::lround(0.0025 * diag));
}

std::vector<std::uint8_t> boundary_mask(const LabelMap& m) {
  const int h = m.h, w = m.w;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      const std::int32_t lab = m.at(y, x);
      if (m.at(y, x - 1) != lab || m.at(y, x + 1) != lab ||
          m.at(y - 1, x) != lab || m.at(y + 1, x) != lab)
        mask[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  return mask;
}

namespace {

// Chebyshev dilation by tol (square window).
std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& mask, int h,
                                 int w, int tol) {
  if (tol <= 0) return mask;
  std::vector<std::uint8_t> out(mask.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask[static_cast<std::size_t>(y) * w + x]) continue;
      const int y0 = std::max(0, y - tol), y1 = std::min(h - 1, y + tol);
      const int x0 = std::max(0, x - tol), x1 = std::min(w - 1, x + tol);
      for (int yy = y0; yy <= y1; ++yy)
        for (int xx = x0; xx <= x1; ++xx)
          out[static_cast<std::size_t>(yy) * w + xx] = 1;
    }
  return out;
}

std::pair<long, long> matched_count(const std::vector<std::uint8_t>& subject,
                                    const std::vector<std::uint8_t>& other_dilated) {
  long total = 0, matched = 0;
  for (std::size_t i = 0; i < subject.size(); ++i) {
    if (!subject[i]) continue;
    ++total;
    if (other_dilated[i]) ++matched;
  }
  return {matched, total};
}

}  // namespace

std::pair<double, double> boundary_recall_precision(const LabelMap& pred,
                                                    const LabelMap& gt, int tol,
                                                    bool* gt_empty) {
  require_same_dims(pred, gt, "boundary_recall_precision");
  const int h = pred.h, w = pred.w;
  const auto bp_pred = boundary_mask(pred);
  const auto bp_gt = boundary_mask(gt);
  const auto pred_dil = dilate(bp_pred, h, w, tol);
  const auto gt_dil = dilate(bp_gt, h, w, tol);

  const auto [rec_hit, rec_tot] = matched_count(bp_gt, pred_dil);
  const auto [pre_hit, pre_tot] = matched_count(bp_pred, gt_dil);
  if (gt_empty) *gt_empty = rec_tot == 0;
  const double br = rec_tot == 0 ? 1.0
                                 : static_cast<double>(rec_hit) /
                                       static_cast<double>(rec_tot);
  const double bp = pre_tot == 0 ? 1.0
                                 : static_cast<double>(pre_hit) /
                                       static_cast<double>(pre_tot);
  return {br, bp};
}

double compactness(const LabelMap& pred) {
  const int h = pred.h, w = pred.w;
  std::map<std::int32_t, long> area;
  std::map<std::int32_t, long> perim;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int32_t lab = pred.at(y, x);
      ++area[lab];
      // unit edges against a different label or the image outside
      if (x == 0 || pred.at(y, x - 1) != lab) ++perim[lab];
      if (x + 1 >= w || pred.at(y, x + 1) != lab) ++perim[lab];
      if (y == 0 || pred.at(y - 1, x) != lab) ++perim[lab];
      if (y + 1 >= h || pred.at(y + 1, x) != lab) ++perim[lab];
    }
  }
  const double n = static_cast<double>(pred.labels.size());
  double co = 0.0;
  for (const auto& [lab, a] : area) {
    const double p = static_cast<double>(perim[lab]);
    const double q = std::min(1.0, 4.0 * 3.14159265358979323846 *
                                       static_cast<double>(a) / (p * p));
    co += (static_cast<double>(a) / n) * q;
  }
  return co;
}

MetricReport evaluate_pair(const LabelMap& pred, const LabelMap& gt) {
  MetricReport r;
  r.tolerance_px = boundary_tolerance(pred.h, pred.w);
  r.asa = asa(pred, gt);
  bool gt_empty = false;
  std::tie(r.br, r.bp) = boundary_recall_precision(pred, gt, r.tolerance_px, &gt_empty);
  r.gt_has_boundary = !gt_empty;
  r.co = compactness(pred);
  r.n_superpixels = distinct_labels(pred);
  return r;
}

int evaluate_directory(const std::string& pred_dir, const std::string& gt_dir,
                       const std::string& out_csv) {
  std::map<std::string, fs::path> preds, gts;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.path().extension() == ".pgm") preds[e.path().stem().string()] = e.path();
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.path().extension() == ".pgm") gts[e.path().stem().string()] = e.path();

  int status = 0;
  std::vector<std::string> missing;
  for (const auto& [stem, p] : preds)
    if (!gts.count(stem)) missing.push_back(stem + " (no ground truth)");
  for (const auto& [stem, p] : gts)
    if (!preds.count(stem)) missing.push_back(stem + " (no prediction)");
  for (const auto& m : missing) {
    std::fprintf(stderr, "error: unpaired label file: %s\n", m.c_str());
    status = 1;
  }

  std::ofstream os(out_csv);
  if (!os) throw std::runtime_error("evaluate_directory: cannot write " + out_csv);
  os << "image,n_superpixels,asa,br,bp,co,tolerance_px\n";

  char line[256];
  std::map<int, std::vector<MetricReport>> buckets;
  int evaluated = 0;
  for (const auto& [stem, path] : preds) {
    auto it = gts.find(stem);
    if (it == gts.end()) continue;
    const LabelMap pred = read_pgm16_labels(path.string());
    const LabelMap gt = read_pgm16_labels(it->second.string());
    const MetricReport r = evaluate_pair(pred, gt);
    std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.6f,%.6f,%d\n",
                  stem.c_str(), r.n_superpixels, r.asa, r.br, r.bp, r.co,
                  r.tolerance_px);
    os << line;
    buckets[r.n_superpixels].push_back(r);
    ++evaluated;
  }
  if (evaluated == 0) {
    std::fprintf(stderr, "error: no matching prediction/ground-truth pairs\n");
    return 1;
  }

  os << "\n";
  for (const auto& [n, rows] : buckets) {
    double a = 0, b = 0, p = 0, c = 0, t = 0;
    for (const auto& r : rows) {
      a += r.asa;
      b += r.br;
      p += r.bp;
      c += r.co;
      t += r.tolerance_px;
    }
    const double cnt = static_cast<double>(rows.size());
    std::snprintf(line, sizeof(line), "mean,%d,%.6f,%.6f,%.6f,%.6f,%.1f\n", n,
                  a / cnt, b / cnt, p / cnt, c / cnt, t / cnt);
    os << line;
  }
  return status;
}

}  // namespace gridpix
