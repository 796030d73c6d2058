#include "gridpix/segmentation.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace gridpix {

LabelMap hard_assign(const AssociationMap& assoc) {
  const GridSpec& g = assoc.grid;
  const int h = g.image_h, w = g.image_w;
  const int gh = g.grid_h(), gw = g.grid_w();
  LabelMap out(h, w);
  out.n_labels = gh * gw;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    const int oi = g.owner_row(y);
    for (int x = 0; x < w; ++x) {
      const int oj = g.owner_col(x);
      const float* qp = assoc.probs.ptr() + (static_cast<std::size_t>(y) * w + x) * 9;
      int best_k = -1;
      float best_q = -1.0f;
      for (int k = 0; k < 9; ++k) {
        const int ci = oi + offset_row(k);
        const int cj = oj + offset_col(k);
        if (ci < 0 || ci >= gh || cj < 0 || cj >= gw) continue;
        if (qp[k] > best_q) {  // strict: ties keep the lowest channel
          best_q = qp[k];
          best_k = k;
        }
      }
      out.at(y, x) = (oi + offset_row(best_k)) * gw + (oj + offset_col(best_k));
    }
  }
  return out;
}

LabelMap compact_labels(const LabelMap& in) {
  LabelMap out(in.h, in.w);
  std::map<std::int32_t, std::int32_t> remap;
  for (std::size_t i = 0; i < in.labels.size(); ++i) {
    auto [it, inserted] =
        remap.try_emplace(in.labels[i], static_cast<std::int32_t>(remap.size()));
    out.labels[i] = it->second;
    (void)inserted;
  }
  out.n_labels = static_cast<int>(remap.size());
  return out;
}

namespace {

// 4-connected components, numbered in raster discovery order.
std::vector<std::int32_t> connected_components(const LabelMap& in, int* n_out) {
  const int h = in.h, w = in.w;
  std::vector<std::int32_t> comp(static_cast<std::size_t>(h) * w, -1);
  std::vector<std::int32_t> stack;
  int next = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t at = static_cast<std::size_t>(y) * w + x;
      if (comp[at] != -1) continue;
      const std::int32_t lab = in.labels[at];
      comp[at] = next;
      stack.push_back(static_cast<std::int32_t>(at));
      while (!stack.empty()) {
        const std::int32_t p = stack.back();
        stack.pop_back();
        const int py = p / w, px = p % w;
        const int nx4[4] = {px - 1, px + 1, px, px};
        const int ny4[4] = {py, py, py - 1, py + 1};
        for (int d = 0; d < 4; ++d) {
          if (nx4[d] < 0 || nx4[d] >= w || ny4[d] < 0 || ny4[d] >= h) continue;
          const std::size_t q = static_cast<std::size_t>(ny4[d]) * w + nx4[d];
          if (comp[q] == -1 && in.labels[q] == lab) {
            comp[q] = next;
            stack.push_back(static_cast<std::int32_t>(q));
          }
        }
      }
      ++next;
    }
  }
  *n_out = next;
  return comp;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
};

}  // namespace

LabelMap enforce_connectivity(const LabelMap& in, double min_size_fraction,
                              double nominal_cell_area) {
  const int h = in.h, w = in.w;
  int n_comp = 0;
  std::vector<std::int32_t> comp = connected_components(in, &n_comp);
  if (n_comp <= 1) {
    LabelMap out(h, w);
    out.n_labels = n_comp;
    return out;  // single component is already connected
  }

  std::vector<long> size(n_comp, 0);
  for (std::int32_t c : comp) ++size[c];

  // shared-boundary edge counts between adjacent components
  std::vector<std::map<int, long>> nbr(n_comp);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int a = comp[static_cast<std::size_t>(y) * w + x];
      if (x + 1 < w) {
        const int b = comp[static_cast<std::size_t>(y) * w + x + 1];
        if (a != b) {
          ++nbr[a][b];
          ++nbr[b][a];
        }
      }
      if (y + 1 < h) {
        const int b = comp[(static_cast<std::size_t>(y) + 1) * w + x];
        if (a != b) {
          ++nbr[a][b];
          ++nbr[b][a];
        }
      }
    }
  }

  // Entries stay keyed by original component ids; queries aggregate them by
  // union-find root so each original adjacency is counted exactly once.
  const double threshold = min_size_fraction * nominal_cell_area;
  UnionFind uf(n_comp);
  int remaining = n_comp;
  bool changed = true;
  while (changed && remaining > 1) {
    changed = false;
    for (int c = 0; c < n_comp; ++c) {
      if (uf.find(c) != c) continue;
      if (static_cast<double>(size[c]) >= threshold) continue;
      std::map<int, long> agg;
      for (const auto& [other, len] : nbr[c]) {
        const int r = uf.find(other);
        if (r != c) agg[r] += len;
      }
      int best = -1;
      long best_len = -1;
      for (const auto& [r, len] : agg) {
        if (len > best_len) {  // map iterates ascending ids: ties keep smaller
          best = r;
          best_len = len;
        }
      }
      if (best < 0) continue;
      uf.parent[c] = best;
      size[best] += size[c];
      for (const auto& [other, len] : nbr[c]) nbr[best][other] += len;
      nbr[c].clear();
      --remaining;
      changed = true;
    }
  }

  LabelMap merged(h, w);
  for (std::size_t i = 0; i < merged.labels.size(); ++i)
    merged.labels[i] = uf.find(comp[i]);
  return compact_labels(merged);
}

Tensor overlay_boundaries(const Tensor& image_hwc, const LabelMap& labels,
                          std::array<float, 3> color) {
  if (image_hwc.ndim() != 3 || image_hwc.dim(2) != 3 ||
      image_hwc.dim(0) != labels.h || image_hwc.dim(1) != labels.w)
    throw std::invalid_argument("overlay_boundaries: image/label shape mismatch");
  Tensor out = image_hwc;
  const int h = labels.h, w = labels.w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int32_t lab = labels.at(y, x);
      const bool edge = (x > 0 && labels.at(y, x - 1) != lab) ||
                        (x + 1 < w && labels.at(y, x + 1) != lab) ||
                        (y > 0 && labels.at(y - 1, x) != lab) ||
                        (y + 1 < h && labels.at(y + 1, x) != lab);
      if (!edge) continue;
      float* px = out.ptr() + (static_cast<std::size_t>(y) * w + x) * 3;
      px[0] = color[0];
      px[1] = color[1];
      px[2] = color[2];
    }
  }
  return out;
}

}  // namespace gridpix
