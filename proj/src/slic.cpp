#include "gridpix/slic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gridpix {

namespace {

// D65 reference white
constexpr double kXn = 0.95047, kYn = 1.0, kZn = 1.08883;

double srgb_linearize(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double srgb_delinearize(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}

double lab_finv(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d ? t * t * t : 3.0 * d * d * (t - 4.0 / 29.0);
}

}  // namespace

LabImage rgb_to_lab(const Tensor& rgb_hwc) {
  if (rgb_hwc.ndim() != 3 || rgb_hwc.dim(2) != 3)
    throw std::invalid_argument("rgb_to_lab: image must be [H,W,3]");
  LabImage out;
  out.values = Tensor(rgb_hwc.shape);
  const std::size_t n = rgb_hwc.numel() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    double rgb[3];
    for (int c = 0; c < 3; ++c) {
      double v = rgb_hwc.data[i * 3 + c];
      if (v < 0.0 || v > 1.0) {
        v = std::min(1.0, std::max(0.0, v));
        ++out.clamped;
      }
      rgb[c] = srgb_linearize(v);
    }
    const double x = 0.4124564 * rgb[0] + 0.3575761 * rgb[1] + 0.1804375 * rgb[2];
    const double y = 0.2126729 * rgb[0] + 0.7151522 * rgb[1] + 0.0721750 * rgb[2];
    const double z = 0.0193339 * rgb[0] + 0.1191920 * rgb[1] + 0.9503041 * rgb[2];
    const double fx = lab_f(x / kXn), fy = lab_f(y / kYn), fz = lab_f(z / kZn);
    out.values.data[i * 3 + 0] = static_cast<float>(116.0 * fy - 16.0);
    out.values.data[i * 3 + 1] = static_cast<float>(500.0 * (fx - fy));
    out.values.data[i * 3 + 2] = static_cast<float>(200.0 * (fy - fz));
  }
  return out;
}

Tensor lab_to_rgb(const Tensor& lab_hwc) {
  if (lab_hwc.ndim() != 3 || lab_hwc.dim(2) != 3)
    throw std::invalid_argument("lab_to_rgb: image must be [H,W,3]");
  Tensor out(lab_hwc.shape);
  const std::size_t n = lab_hwc.numel() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    const double L = lab_hwc.data[i * 3 + 0];
    const double a = lab_hwc.data[i * 3 + 1];
    const double b = lab_hwc.data[i * 3 + 2];
    const double fy = (L + 16.0) / 116.0;
    const double x = kXn * lab_finv(fy + a / 500.0);
    const double y = kYn * lab_finv(fy);
    const double z = kZn * lab_finv(fy - b / 200.0);
    const double rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    const double gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    const double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    out.data[i * 3 + 0] = static_cast<float>(
        std::min(1.0, std::max(0.0, srgb_delinearize(rl))));
    out.data[i * 3 + 1] = static_cast<float>(
        std::min(1.0, std::max(0.0, srgb_delinearize(gl))));
    out.data[i * 3 + 2] = static_cast<float>(
        std::min(1.0, std::max(0.0, srgb_delinearize(bl))));
  }
  return out;
}

namespace {

struct Center {
  double l = 0, a = 0, b = 0, x = 0, y = 0;
};

double image_gradient(const Tensor& lab, int x, int y) {
  const int h = lab.dim(0), w = lab.dim(1);
  const int xm = std::max(0, x - 1), xp = std::min(w - 1, x + 1);
  const int ym = std::max(0, y - 1), yp = std::min(h - 1, y + 1);
  double g = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double dx = lab.at(y, xp, c) - lab.at(y, xm, c);
    const double dy = lab.at(yp, x, c) - lab.at(ym, x, c);
    g += dx * dx + dy * dy;
  }
  return g;
}

}  // namespace

SlicResult slic(const LabImage& lab, int n_superpixels, double compactness,
                int iterations) {
  const Tensor& img = lab.values;
  const int h = img.dim(0), w = img.dim(1);
  const long npix = static_cast<long>(h) * w;
  if (n_superpixels < 1 || iterations < 1)
    throw std::invalid_argument("slic: need n_superpixels >= 1, iterations >= 1");
  if (n_superpixels > npix)
    throw std::invalid_argument("slic: more superpixels than pixels requested");

  const int step = std::max(
      2, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(npix) /
                                              n_superpixels))));
  // seed grid: the densest nx*ny <= K tiling whose aspect tracks the image
  int nx = 1, ny = 1;
  double best_aspect = 1e300;
  const double want = std::log(static_cast<double>(w) / h);
  for (int cy = 1; cy <= n_superpixels && cy <= h; ++cy) {
    const int cx = std::min(static_cast<long>(w),
                            static_cast<long>(n_superpixels / cy));
    if (cx < 1) continue;
    const long prod = static_cast<long>(cx) * cy;
    const long best_prod = static_cast<long>(nx) * ny;
    const double aspect =
        std::fabs(std::log(static_cast<double>(cx) / cy) - want);
    if (prod > best_prod || (prod == best_prod && aspect < best_aspect - 1e-12)) {
      nx = static_cast<int>(cx);
      ny = cy;
      best_aspect = aspect;
    }
  }

  // grid seeds, perturbed to the lowest-gradient spot in a 3x3 neighborhood
  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      int sx = std::min(w - 1, (2 * i + 1) * w / (2 * nx));
      int sy = std::min(h - 1, (2 * j + 1) * h / (2 * ny));
      double best = image_gradient(img, sx, sy);
      int bx = sx, by = sy;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int cx = sx + dx, cy = sy + dy;
          if (cx < 0 || cx >= w || cy < 0 || cy >= h) continue;
          const double g = image_gradient(img, cx, cy);
          if (g < best) {
            best = g;
            bx = cx;
            by = cy;
          }
        }
      Center c;
      c.l = img.at(by, bx, 0);
      c.a = img.at(by, bx, 1);
      c.b = img.at(by, bx, 2);
      c.x = bx;
      c.y = by;
      centers.push_back(c);
    }
  }
  const int k = static_cast<int>(centers.size());
  const double wxy = (compactness / step) * (compactness / step);

  auto dist2 = [&](const Center& c, int x, int y) {
    const float* px = img.ptr() + (static_cast<std::size_t>(y) * w + x) * 3;
    const double dl = px[0] - c.l, da = px[1] - c.a, db = px[2] - c.b;
    const double dx = x - c.x, dy = y - c.y;
    return dl * dl + da * da + db * db + wxy * (dx * dx + dy * dy);
  };

  // initial assignment: the seed grid block containing the pixel
  std::vector<std::int32_t> label(static_cast<std::size_t>(npix));
  for (int y = 0; y < h; ++y) {
    const int j = std::min(ny - 1, y * ny / h);
    for (int x = 0; x < w; ++x) {
      const int i = std::min(nx - 1, x * nx / w);
      label[static_cast<std::size_t>(y) * w + x] = j * nx + i;
    }
  }

  SlicResult result;
  std::vector<double> dist(static_cast<std::size_t>(npix));
  std::vector<double> acc(static_cast<std::size_t>(k) * 6);
  for (int it = 0; it < iterations; ++it) {
    // update: centers move to the mean of their pixels
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        double* a = acc.data() + static_cast<std::size_t>(label[p]) * 6;
        const float* px = img.ptr() + p * 3;
        a[0] += px[0];
        a[1] += px[1];
        a[2] += px[2];
        a[3] += x;
        a[4] += y;
        a[5] += 1.0;
      }
    for (int c = 0; c < k; ++c) {
      const double* a = acc.data() + static_cast<std::size_t>(c) * 6;
      if (a[5] <= 0.0) continue;  // empty cluster keeps its position
      centers[c].l = a[0] / a[5];
      centers[c].a = a[1] / a[5];
      centers[c].b = a[2] / a[5];
      centers[c].x = a[3] / a[5];
      centers[c].y = a[4] / a[5];
    }

    // assignment: current label is always a candidate, so the summed cost
    // cannot increase across an iteration
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        dist[p] = dist2(centers[label[p]], x, y);
      }
    for (int c = 0; c < k; ++c) {
      const int x0 = std::max(0, static_cast<int>(centers[c].x) - step);
      const int x1 = std::min(w - 1, static_cast<int>(centers[c].x) + step);
      const int y0 = std::max(0, static_cast<int>(centers[c].y) - step);
      const int y1 = std::min(h - 1, static_cast<int>(centers[c].y) + step);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          const double d = dist2(centers[c], x, y);
          if (d < dist[p]) {
            dist[p] = d;
            label[p] = c;
          }
        }
    }

    double cost = 0.0;
    for (double d : dist) cost += d;
    result.cost_history.push_back(cost);
  }

  result.n_seeds = k;
  result.raw_labels = LabelMap(h, w);
  result.raw_labels.labels = label;
  result.raw_labels.n_labels = k;
  result.labels = enforce_connectivity(result.raw_labels, 0.25,
                                       static_cast<double>(step) * step);
  return result;
}

}  // namespace gridpix
