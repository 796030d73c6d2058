#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridpix {

// Dense row-major float32 tensor. This is the single data carrier for
// images, feature volumes, activations, gradients and parameters.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0f);
  }
  Tensor(std::vector<int> s, float fill) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }
  Tensor(std::vector<int> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("Tensor: negative extent");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  // Flat index helpers (row-major). No bounds checks in release paths.
  std::size_t idx(int a, int b) const {
    return static_cast<std::size_t>(a) * shape[1] + b;
  }
  std::size_t idx(int a, int b, int c) const {
    return (static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c;
  }
  std::size_t idx(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * shape[1] + b) * shape[2] + c) *
               shape[3] +
           d;
  }
  float& at(int a, int b) { return data[idx(a, b)]; }
  float at(int a, int b) const { return data[idx(a, b)]; }
  float& at(int a, int b, int c) { return data[idx(a, b, c)]; }
  float at(int a, int b, int c) const { return data[idx(a, b, c)]; }
  float& at(int a, int b, int c, int d) { return data[idx(a, b, c, d)]; }
  float at(int a, int b, int c, int d) const { return data[idx(a, b, c, d)]; }
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape;
}

std::string shape_str(const std::vector<int>& s);

// Throws if the tensor holds any NaN or Inf.
void require_finite(const Tensor& t, const std::string& what);

// Layout converters between [H,W,C] and [C,H,W].
Tensor chw_from_hwc(const Tensor& t);
Tensor hwc_from_chw(const Tensor& t);

}  // namespace gridpix
