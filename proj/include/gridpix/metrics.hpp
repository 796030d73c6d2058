#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gridpix/segmentation.hpp"

namespace gridpix {

struct MetricReport {
  double asa = 0.0;
  double br = 0.0;
  double bp = 0.0;
  double co = 0.0;
  int n_superpixels = 0;
  int tolerance_px = 0;
  bool gt_has_boundary = true;
};

// Achievable segmentation accuracy: each superpixel takes its majority
// ground-truth segment.
double asa(const LabelMap& pred, const LabelMap& gt);

// Boundary tolerance rule: 0.0025 x image diagonal, rounded to the closest
// integer.
int boundary_tolerance(int h, int w);

// Boundary pixels are 4-neighbor label changes; image-border pixels are not
// counted. A boundary pixel matches when one of the other map's boundary
// pixels lies within Chebyshev distance tol. Returns (recall, precision);
// recall is 1.0 (flagged via *gt_empty) when the gt has no boundary.
std::pair<double, double> boundary_recall_precision(const LabelMap& pred,
                                                    const LabelMap& gt, int tol,
                                                    bool* gt_empty = nullptr);

// Area-weighted isoperimetric quotient, clamped to 1 per superpixel.
double compactness(const LabelMap& pred);

// Boundary mask per the BR/BP definition (border pixels excluded).
std::vector<std::uint8_t> boundary_mask(const LabelMap& labels);

MetricReport evaluate_pair(const LabelMap& pred, const LabelMap& gt);

// Pairs 16-bit PGM label files by stem, writes one CSV row per image plus
// per-superpixel-count aggregate means after a blank line. Missing pairs are
// reported and skipped; the return value is the process exit status.
int evaluate_directory(const std::string& pred_dir, const std::string& gt_dir,
                       const std::string& out_csv);

}  // namespace gridpix
