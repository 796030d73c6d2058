#include "gridpix/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gridpix {

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

void require_finite(const Tensor& t, const std::string& what) {
  for (float v : t.data) {
    if (!std::isfinite(v))
      throw std::runtime_error(what + ": non-finite value in tensor " +
                               shape_str(t.shape));
  }
}

Tensor chw_from_hwc(const Tensor& t) {
  if (t.ndim() != 3) throw std::invalid_argument("chw_from_hwc: need 3 dims");
  const int h = t.dim(0), w = t.dim(1), c = t.dim(2);
  Tensor out({c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float* src = t.ptr() + (static_cast<std::size_t>(y) * w + x) * c;
      for (int ch = 0; ch < c; ++ch)
        out.data[(static_cast<std::size_t>(ch) * h + y) * w + x] = src[ch];
    }
  return out;
}

Tensor hwc_from_chw(const Tensor& t) {
  if (t.ndim() != 3) throw std::invalid_argument("hwc_from_chw: need 3 dims");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out({h, w, c});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const float* src = t.ptr() + (static_cast<std::size_t>(ch) * h + y) * w;
      for (int x = 0; x < w; ++x)
        out.data[(static_cast<std::size_t>(y) * w + x) * c + ch] = src[x];
    }
  return out;
}

}  // namespace gridpix
