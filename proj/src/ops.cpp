#include "gridpix/ops.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include "gridpix/assoc.hpp"
#include "gridpix/kernels.hpp"

namespace gridpix::ad {

namespace {

void require_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
  if (!same_shape(a->value, b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a->value.shape) + " vs " +
                                shape_str(b->value.shape));
}

void accum(Tensor& dst, const Tensor& src) {
  float* __restrict d = dst.ptr();
  const float* __restrict s = src.ptr();
  const std::size_t n = dst.numel();
  for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

// [C,H,W] slice of a [N,C,H,W] tensor
Tensor slice_n(const Tensor& t, int n) {
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const std::size_t sz = static_cast<std::size_t>(c) * h * w;
  Tensor out({c, h, w});
  std::memcpy(out.ptr(), t.ptr() + sz * n, sz * sizeof(float));
  return out;
}

void accum_slice(Tensor& dst, int n, const Tensor& src) {
  const std::size_t sz = src.numel();
  float* d = dst.ptr() + sz * n;
  const float* s = src.ptr();
  for (std::size_t i = 0; i < sz; ++i) d[i] += s[i];
}

}  // namespace

NodePtr add(NodePtr a, NodePtr b) {
  require_same_shape(a, b, "add");
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = a->value.data[i] + b->value.data[i];
  NodePtr n = make_node("add", std::move(out), {std::move(a), std::move(b)},
                        [](Node& self) {
                          for (int i = 0; i < 2; ++i)
                            if (self.inputs[i]->requires_grad)
                              accum(self.inputs[i]->grad, self.grad);
                        });
  n->fwd_double = [](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(in[0]->size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = (*in[0])[i] + (*in[1])[i];
    return out;
  };
  return n;
}

NodePtr sub(NodePtr a, NodePtr b) {
  require_same_shape(a, b, "sub");
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = a->value.data[i] - b->value.data[i];
  NodePtr n = make_node("sub", std::move(out), {std::move(a), std::move(b)},
                        [](Node& self) {
                          if (self.inputs[0]->requires_grad)
                            accum(self.inputs[0]->grad, self.grad);
                          if (self.inputs[1]->requires_grad) {
                            float* d = self.inputs[1]->grad.ptr();
                            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                              d[i] -= self.grad.data[i];
                          }
                        });
  n->fwd_double = [](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(in[0]->size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = (*in[0])[i] - (*in[1])[i];
    return out;
  };
  return n;
}

NodePtr mul(NodePtr a, NodePtr b) {
  require_same_shape(a, b, "mul");
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = a->value.data[i] * b->value.data[i];
  NodePtr n = make_node(
      "mul", std::move(out), {std::move(a), std::move(b)}, [](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        if (self.inputs[0]->requires_grad) {
          float* d = self.inputs[0]->grad.ptr();
          for (std::size_t i = 0; i < self.grad.numel(); ++i)
            d[i] += self.grad.data[i] * bv.data[i];
        }
        if (self.inputs[1]->requires_grad) {
          float* d = self.inputs[1]->grad.ptr();
          for (std::size_t i = 0; i < self.grad.numel(); ++i)
            d[i] += self.grad.data[i] * av.data[i];
        }
      });
  n->fwd_double = [](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(in[0]->size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = (*in[0])[i] * (*in[1])[i];
    return out;
  };
  return n;
}

NodePtr scale(NodePtr x, double s) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = static_cast<float>(x->value.data[i] * s);
  NodePtr n = make_node("scale", std::move(out), {std::move(x)}, [s](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    float* d = self.inputs[0]->grad.ptr();
    for (std::size_t i = 0; i < self.grad.numel(); ++i)
      d[i] += static_cast<float>(self.grad.data[i] * s);
  });
  n->fwd_double = [s](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(in[0]->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * s;
    return out;
  };
  return n;
}

NodePtr sum_all(NodePtr x) {
  double acc = 0.0;
  for (float v : x->value.data) acc += v;
  Tensor out({1});
  out.data[0] = static_cast<float>(acc);
  NodePtr n = make_node("sum_all", std::move(out), {std::move(x)}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const float g = self.grad.data[0];
    float* d = self.inputs[0]->grad.ptr();
    for (std::size_t i = 0; i < self.inputs[0]->grad.numel(); ++i) d[i] += g;
  });
  n->fwd_double = [](const std::vector<const DoubleBuf*>& in) {
    double acc = 0.0;
    for (double v : *in[0]) acc += v;
    return DoubleBuf{acc};
  };
  return n;
}

NodePtr mean_all(NodePtr x) {
  const double inv = 1.0 / static_cast<double>(x->value.numel());
  return scale(sum_all(std::move(x)), inv);
}

NodePtr leaky_relu(NodePtr x, float negative_slope) {
  Tensor out(x->value.shape);
  const float* src = x->value.ptr();
  // branch pattern snapshot keeps the double re-evaluation on the same
  // piecewise-linear segment the analytic gradient differentiates
  auto signs = std::make_shared<std::vector<std::uint8_t>>(out.numel());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*signs)[i] = src[i] >= 0.0f;
    out.data[i] = src[i] >= 0.0f ? src[i] : negative_slope * src[i];
  }
  NodePtr n = make_node(
      "leaky_relu", std::move(out), {std::move(x)}, [negative_slope](Node& self) {
        if (!self.inputs[0]->requires_grad) return;
        const float* xv = self.inputs[0]->value.ptr();
        float* d = self.inputs[0]->grad.ptr();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
          d[i] += self.grad.data[i] * (xv[i] >= 0.0f ? 1.0f : negative_slope);
      });
  n->fwd_double = [negative_slope, signs](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(in[0]->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = (*in[0])[i];
      out[i] = (*signs)[i] ? v : negative_slope * v;
    }
    return out;
  };
  return n;
}

NodePtr smooth_l1(NodePtr x) {
  Tensor out(x->value.shape);
  const float* src = x->value.ptr();
  auto quad = std::make_shared<std::vector<std::uint8_t>>(out.numel());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const float a = std::fabs(src[i]);
    (*quad)[i] = a < 1.0f;
    out.data[i] = a < 1.0f ? 0.5f * src[i] * src[i] : a - 0.5f;
  }
  NodePtr n = make_node("smooth_l1", std::move(out), {std::move(x)}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const float* xv = self.inputs[0]->value.ptr();
    float* d = self.inputs[0]->grad.ptr();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const float v = xv[i];
      const float dd = std::fabs(v) < 1.0f ? v : (v > 0.0f ? 1.0f : -1.0f);
      d[i] += self.grad.data[i] * dd;
    }
  });
  n->fwd_double = [quad](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(in[0]->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = (*in[0])[i];
      out[i] = (*quad)[i] ? 0.5 * v * v : std::fabs(v) - 0.5;
    }
    return out;
  };
  return n;
}

NodePtr softmax_channels(NodePtr x) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("softmax_channels: need [N,C,H,W]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(xv.shape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const std::size_t base = (static_cast<std::size_t>(b) * c * h + y) * w + xx;
        float mx = xv.data[base];
        for (int ch = 1; ch < c; ++ch)
          mx = std::max(mx, xv.data[base + ch * plane]);
        double sum = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const float e = std::exp(xv.data[base + ch * plane] - mx);
          out.data[base + ch * plane] = e;
          sum += e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int ch = 0; ch < c; ++ch) out.data[base + ch * plane] *= inv;
      }
    }
  }
  NodePtr node = make_node(
      "softmax_channels", std::move(out), {std::move(x)},
      [n, c, h, w, plane](Node& self) {
        if (!self.inputs[0]->requires_grad) return;
        const Tensor& y = self.value;
        const Tensor& dy = self.grad;
        Tensor& dx = self.inputs[0]->grad;
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < n; ++b) {
          for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
              const std::size_t base =
                  (static_cast<std::size_t>(b) * c * h + yy) * w + xx;
              double dot = 0.0;
              for (int ch = 0; ch < c; ++ch)
                dot += static_cast<double>(y.data[base + ch * plane]) *
                       dy.data[base + ch * plane];
              for (int ch = 0; ch < c; ++ch)
                dx.data[base + ch * plane] += static_cast<float>(
                    y.data[base + ch * plane] *
                    (dy.data[base + ch * plane] - dot));
            }
          }
        }
      });
  node->fwd_double = [n, c, h, w, plane](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(in[0]->size());
    const DoubleBuf& xd = *in[0];
    for (int b = 0; b < n; ++b)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t base = static_cast<std::size_t>(b) * c * plane + p;
        double mx = xd[base];
        for (int ch = 1; ch < c; ++ch) mx = std::max(mx, xd[base + ch * plane]);
        double sum = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double e = std::exp(xd[base + ch * plane] - mx);
          out[base + ch * plane] = e;
          sum += e;
        }
        for (int ch = 0; ch < c; ++ch) out[base + ch * plane] /= sum;
      }
    return out;
  };
  return node;
}

NodePtr masked_softmax_channels(NodePtr x, Tensor mask) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("masked_softmax: need [N,C,H,W]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (mask.ndim() != 3 || mask.dim(0) != c || mask.dim(1) != h || mask.dim(2) != w)
    throw std::invalid_argument("masked_softmax: mask must be [C,H,W]");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto maskp = std::make_shared<Tensor>(std::move(mask));
  Tensor out(xv.shape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const std::size_t mbase = static_cast<std::size_t>(y) * w + xx;
        const std::size_t base = (static_cast<std::size_t>(b) * c * h + y) * w + xx;
        float mx = -3.4e38f;
        for (int ch = 0; ch < c; ++ch)
          if (maskp->data[mbase + ch * plane] != 0.0f)
            mx = std::max(mx, xv.data[base + ch * plane]);
        double sum = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          float e = 0.0f;
          if (maskp->data[mbase + ch * plane] != 0.0f) {
            e = std::exp(xv.data[base + ch * plane] - mx);
            sum += e;
          }
          out.data[base + ch * plane] = e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int ch = 0; ch < c; ++ch) out.data[base + ch * plane] *= inv;
      }
    }
  }
  NodePtr node = make_node(
      "masked_softmax", std::move(out), {std::move(x)},
      [n, c, h, w, plane, maskp](Node& self) {
        if (!self.inputs[0]->requires_grad) return;
        const Tensor& y = self.value;
        const Tensor& dy = self.grad;
        Tensor& dx = self.inputs[0]->grad;
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < n; ++b) {
          for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
              const std::size_t mbase = static_cast<std::size_t>(yy) * w + xx;
              const std::size_t base =
                  (static_cast<std::size_t>(b) * c * h + yy) * w + xx;
              double dot = 0.0;
              for (int ch = 0; ch < c; ++ch)
                dot += static_cast<double>(y.data[base + ch * plane]) *
                       dy.data[base + ch * plane];
              for (int ch = 0; ch < c; ++ch) {
                if (maskp->data[mbase + ch * plane] == 0.0f) continue;
                dx.data[base + ch * plane] += static_cast<float>(
                    y.data[base + ch * plane] *
                    (dy.data[base + ch * plane] - dot));
              }
            }
          }
        }
      });
  node->fwd_double = [n, c, plane, maskp](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(in[0]->size());
    const DoubleBuf& xd = *in[0];
    for (int b = 0; b < n; ++b)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t base = static_cast<std::size_t>(b) * c * plane + p;
        double mx = -1e300;
        for (int ch = 0; ch < c; ++ch)
          if (maskp->data[p + ch * plane] != 0.0f)
            mx = std::max(mx, xd[base + ch * plane]);
        double sum = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          double e = 0.0;
          if (maskp->data[p + ch * plane] != 0.0f) {
            e = std::exp(xd[base + ch * plane] - mx);
            sum += e;
          }
          out[base + ch * plane] = e;
        }
        for (int ch = 0; ch < c; ++ch) out[base + ch * plane] /= sum;
      }
    return out;
  };
  return node;
}

namespace {

// shared by conv2d fwd_double and transposed_conv2d backward checks
DoubleBuf conv2d_double(const DoubleBuf& x, int n, int ci, int h, int w,
                        const DoubleBuf& wgt, int co, int kh, int kw,
                        const DoubleBuf* bias, int stride, int pad, int dil) {
  const int oh = kernels::conv_out_extent(h, kh, stride, pad, dil);
  const int ow = kernels::conv_out_extent(w, kw, stride, pad, dil);
  DoubleBuf y(static_cast<std::size_t>(n) * co * oh * ow, 0.0);
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[oc] : 0.0;
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride - pad + ky * dil;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride - pad + kx * dil;
                if (ix < 0 || ix >= w) continue;
                acc += x[((static_cast<std::size_t>(b) * ci + ic) * h + iy) * w + ix] *
                       wgt[((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx];
              }
            }
          y[((static_cast<std::size_t>(b) * co + oc) * oh + oy) * ow + ox] = acc;
        }
  return y;
}

}  // namespace

NodePtr conv2d(NodePtr x, NodePtr w, NodePtr bias, int stride, int pad,
               int dilation) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 4 || wv.ndim() != 4)
    throw std::invalid_argument("conv2d: need x [N,Ci,H,W], w [Co,Ci,kh,kw]");
  const int n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), ww = xv.dim(3);
  const int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != ci)
    throw std::invalid_argument("conv2d: weight input channels " +
                                std::to_string(wv.dim(1)) +
                                " do not match input channels " +
                                std::to_string(ci));
  if (bias && bias->value.numel() != static_cast<std::size_t>(co))
    throw std::invalid_argument("conv2d: bias size mismatch");
  const int oh = kernels::conv_out_extent(h, kh, stride, pad, dilation);
  const int ow = kernels::conv_out_extent(ww, kw, stride, pad, dilation);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

  const int kdim = ci * kh * kw;
  const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
  Tensor out({n, co, oh, ow});
  std::vector<float> col(static_cast<std::size_t>(kdim) * ncols);
  for (int b = 0; b < n; ++b) {
    kernels::im2col(xv.ptr() + static_cast<std::size_t>(b) * ci * h * ww, ci, h,
                    ww, kh, kw, stride, pad, dilation, col.data());
    kernels::gemm(co, static_cast<int>(ncols), kdim, wv.ptr(), col.data(),
                  out.ptr() + static_cast<std::size_t>(b) * co * ncols);
  }
  if (bias) {
    const float* bp = bias->value.ptr();
    for (int b = 0; b < n; ++b)
      for (int oc = 0; oc < co; ++oc) {
        float* dst = out.ptr() + (static_cast<std::size_t>(b) * co + oc) * ncols;
        const float bv = bp[oc];
        for (std::size_t i = 0; i < ncols; ++i) dst[i] += bv;
      }
  }

  const bool has_bias = static_cast<bool>(bias);
  std::vector<NodePtr> inputs = bias ? std::vector<NodePtr>{x, w, bias}
                                     : std::vector<NodePtr>{x, w};
  NodePtr node = make_node(
      "conv2d", std::move(out), std::move(inputs),
      [n, ci, h, ww, co, kh, kw, stride, pad, dilation, kdim, ncols](Node& self) {
        NodePtr x = self.inputs[0];
        NodePtr w = self.inputs[1];
        NodePtr bias = self.inputs.size() > 2 ? self.inputs[2] : nullptr;
        const Tensor& dy = self.grad;
        std::vector<float> col(static_cast<std::size_t>(kdim) * ncols);
        if (w->requires_grad) {
          Tensor tmp({co, kdim});
          for (int b = 0; b < n; ++b) {
            kernels::im2col(x->value.ptr() + static_cast<std::size_t>(b) * ci * h * ww,
                            ci, h, ww, kh, kw, stride, pad, dilation, col.data());
            kernels::gemm_bt(co, kdim, static_cast<int>(ncols),
                             dy.ptr() + static_cast<std::size_t>(b) * co * ncols,
                             col.data(), tmp.ptr());
            accum(w->grad, tmp);
          }
        }
        if (bias && bias->requires_grad) {
          for (int b = 0; b < n; ++b)
            for (int oc = 0; oc < co; ++oc) {
              const float* src =
                  dy.ptr() + (static_cast<std::size_t>(b) * co + oc) * ncols;
              double acc = 0.0;
              for (std::size_t i = 0; i < ncols; ++i) acc += src[i];
              bias->grad.data[oc] += static_cast<float>(acc);
            }
        }
        if (x->requires_grad) {
          Tensor dxn({ci, h, ww});
          for (int b = 0; b < n; ++b) {
            kernels::gemm_at(kdim, static_cast<int>(ncols), co, w->value.ptr(),
                             dy.ptr() + static_cast<std::size_t>(b) * co * ncols,
                             col.data());
            kernels::col2im(col.data(), ci, h, ww, kh, kw, stride, pad, dilation,
                            dxn.ptr());
            accum_slice(x->grad, b, dxn);
          }
        }
      });
  node->fwd_double = [n, ci, h, ww, co, kh, kw, stride, pad, dilation,
                      has_bias](const std::vector<const DoubleBuf*>& in) {
    return conv2d_double(*in[0], n, ci, h, ww, *in[1], co, kh, kw,
                         has_bias ? in[2] : nullptr, stride, pad, dilation);
  };
  return node;
}

NodePtr transposed_conv2d(NodePtr x, NodePtr w, NodePtr bias, int stride,
                          int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 4 || wv.ndim() != 4)
    throw std::invalid_argument(
        "transposed_conv2d: need x [N,Ci,H,W], w [Ci,Co,kh,kw]");
  const int n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), ww = xv.dim(3);
  const int co = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(0) != ci)
    throw std::invalid_argument("transposed_conv2d: weight channels " +
                                std::to_string(wv.dim(0)) +
                                " do not match input channels " +
                                std::to_string(ci));
  if (bias && bias->value.numel() != static_cast<std::size_t>(co))
    throw std::invalid_argument("transposed_conv2d: bias size mismatch");
  const int oh = (h - 1) * stride - 2 * pad + kh;
  const int ow = (ww - 1) * stride - 2 * pad + kw;
  if (oh <= 0 || ow <= 0)
    throw std::invalid_argument("transposed_conv2d: empty output");

  const int kdim = co * kh * kw;
  const std::size_t nin = static_cast<std::size_t>(h) * ww;
  Tensor out({n, co, oh, ow});
  std::vector<float> col(static_cast<std::size_t>(kdim) * nin);
  for (int b = 0; b < n; ++b) {
    // out = col2im(W^T X): the exact adjoint of the strided convolution
    kernels::gemm_at(kdim, static_cast<int>(nin), ci, wv.ptr(),
                     xv.ptr() + static_cast<std::size_t>(b) * ci * nin, col.data());
    kernels::col2im(col.data(), co, oh, ow, kh, kw, stride, pad, 1,
                    out.ptr() + static_cast<std::size_t>(b) * co * oh * ow);
  }
  if (bias) {
    const float* bp = bias->value.ptr();
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    for (int b = 0; b < n; ++b)
      for (int oc = 0; oc < co; ++oc) {
        float* dst = out.ptr() + (static_cast<std::size_t>(b) * co + oc) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += bp[oc];
      }
  }

  const bool has_bias = static_cast<bool>(bias);
  std::vector<NodePtr> inputs = bias ? std::vector<NodePtr>{x, w, bias}
                                     : std::vector<NodePtr>{x, w};
  NodePtr node = make_node(
      "transposed_conv2d", std::move(out), std::move(inputs),
      [n, ci, h, ww, co, kh, kw, stride, pad, kdim, nin, oh, ow](Node& self) {
        NodePtr x = self.inputs[0];
        NodePtr w = self.inputs[1];
        NodePtr bias = self.inputs.size() > 2 ? self.inputs[2] : nullptr;
        const Tensor& dy = self.grad;
        std::vector<float> col(static_cast<std::size_t>(kdim) * nin);
        const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
        for (int b = 0; b < n; ++b) {
          const bool need_x = x->requires_grad;
          const bool need_w = w->requires_grad;
          if (need_x || need_w)
            kernels::im2col(dy.ptr() + static_cast<std::size_t>(b) * co * oplane,
                            co, oh, ow, kh, kw, stride, pad, 1, col.data());
          if (need_x) {
            Tensor dxn({ci, h, ww});
            kernels::gemm(ci, static_cast<int>(nin), kdim, w->value.ptr(),
                          col.data(), dxn.ptr());
            accum_slice(x->grad, b, dxn);
          }
          if (need_w) {
            Tensor tmp({ci, kdim});
            kernels::gemm_bt(ci, kdim, static_cast<int>(nin),
                             x->value.ptr() + static_cast<std::size_t>(b) * ci * nin,
                             col.data(), tmp.ptr());
            accum(w->grad, tmp);
          }
        }
        if (bias && bias->requires_grad) {
          for (int b = 0; b < n; ++b)
            for (int oc = 0; oc < co; ++oc) {
              const float* src =
                  dy.ptr() + (static_cast<std::size_t>(b) * co + oc) * oplane;
              double acc = 0.0;
              for (std::size_t i = 0; i < oplane; ++i) acc += src[i];
              bias->grad.data[oc] += static_cast<float>(acc);
            }
        }
      });
  node->fwd_double = [n, ci, h, ww, co, kh, kw, stride, pad, oh, ow,
                      has_bias](const std::vector<const DoubleBuf*>& in) {
    const DoubleBuf& xd = *in[0];
    const DoubleBuf& wd = *in[1];
    DoubleBuf y(static_cast<std::size_t>(n) * co * oh * ow, 0.0);
    for (int b = 0; b < n; ++b)
      for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double acc = has_bias ? (*in[2])[oc] : 0.0;
            for (int ic = 0; ic < ci; ++ic)
              for (int ky = 0; ky < kh; ++ky) {
                const int ty = oy + pad - ky;
                if (ty < 0 || ty % stride != 0) continue;
                const int iy = ty / stride;
                if (iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int tx = ox + pad - kx;
                  if (tx < 0 || tx % stride != 0) continue;
                  const int ix = tx / stride;
                  if (ix >= ww) continue;
                  acc += xd[((static_cast<std::size_t>(b) * ci + ic) * h + iy) * ww + ix] *
                         wd[((static_cast<std::size_t>(ic) * co + oc) * kh + ky) * kw + kx];
                }
              }
            y[((static_cast<std::size_t>(b) * co + oc) * oh + oy) * ow + ox] = acc;
          }
    return y;
  };
  return node;
}

NodePtr batch_norm(NodePtr x, NodePtr gamma, NodePtr beta, BNState* state,
                   float momentum, float eps, bool training) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("batch_norm: need [N,C,H,W]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (gamma->value.numel() != static_cast<std::size_t>(c) ||
      beta->value.numel() != static_cast<std::size_t>(c))
    throw std::invalid_argument("batch_norm: gamma/beta size mismatch");
  if (!state) throw std::invalid_argument("batch_norm: null state");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t per_channel = static_cast<std::size_t>(n) * plane;

  struct Saved {
    std::vector<float> mean, inv;
    std::vector<double> run_mean, run_var;  // snapshot for eval-mode double eval
    bool training;
  };
  auto saved = std::make_shared<Saved>();
  saved->training = training;
  saved->mean.resize(c);
  saved->inv.resize(c);

  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double sum = 0.0, sq = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* src = xv.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += src[i];
          sq += static_cast<double>(src[i]) * src[i];
        }
      }
      const double mu = sum / static_cast<double>(per_channel);
      const double var = std::max(0.0, sq / static_cast<double>(per_channel) - mu * mu);
      saved->mean[ch] = static_cast<float>(mu);
      saved->inv[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
      state->running_mean.data[ch] = static_cast<float>(
          (1.0 - momentum) * state->running_mean.data[ch] + momentum * mu);
      state->running_var.data[ch] = static_cast<float>(
          (1.0 - momentum) * state->running_var.data[ch] + momentum * var);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      saved->mean[ch] = state->running_mean.data[ch];
      saved->inv[ch] = static_cast<float>(
          1.0 / std::sqrt(static_cast<double>(state->running_var.data[ch]) + eps));
      saved->run_mean.push_back(state->running_mean.data[ch]);
      saved->run_var.push_back(state->running_var.data[ch]);
    }
  }

  Tensor out(xv.shape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* src = xv.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
      float* dst = out.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
      const float mu = saved->mean[ch];
      const float inv = saved->inv[ch];
      const float g = gamma->value.data[ch];
      const float bb = beta->value.data[ch];
      for (std::size_t i = 0; i < plane; ++i)
        dst[i] = g * (src[i] - mu) * inv + bb;
    }
  }

  NodePtr node = make_node(
      "batch_norm", std::move(out), {std::move(x), std::move(gamma), std::move(beta)},
      [n, c, plane, per_channel, saved](Node& self) {
        NodePtr x = self.inputs[0];
        NodePtr gamma = self.inputs[1];
        NodePtr beta = self.inputs[2];
        const Tensor& dy = self.grad;
        const Tensor& xv = x->value;
        for (int ch = 0; ch < c; ++ch) {
          const float mu = saved->mean[ch];
          const float inv = saved->inv[ch];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < n; ++b) {
            const float* dsrc = dy.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
            const float* src = xv.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += dsrc[i];
              sum_dy_xhat += static_cast<double>(dsrc[i]) * (src[i] - mu) * inv;
            }
          }
          if (gamma->requires_grad)
            gamma->grad.data[ch] += static_cast<float>(sum_dy_xhat);
          if (beta->requires_grad)
            beta->grad.data[ch] += static_cast<float>(sum_dy);
          if (!x->requires_grad) continue;
          const float g = gamma->value.data[ch];
          if (saved->training) {
            const double im = 1.0 / static_cast<double>(per_channel);
            for (int b = 0; b < n; ++b) {
              const float* dsrc =
                  dy.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
              const float* src =
                  xv.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
              float* dst = x->grad.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = static_cast<double>(src[i] - mu) * inv;
                dst[i] += static_cast<float>(
                    g * inv * (dsrc[i] - im * sum_dy - xhat * im * sum_dy_xhat));
              }
            }
          } else {
            for (int b = 0; b < n; ++b) {
              const float* dsrc =
                  dy.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
              float* dst = x->grad.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
              for (std::size_t i = 0; i < plane; ++i)
                dst[i] += g * inv * dsrc[i];
            }
          }
        }
      });
  const double deps = eps;
  node->fwd_double = [n, c, plane, per_channel, saved,
                      deps](const std::vector<const DoubleBuf*>& in) {
    const DoubleBuf& xd = *in[0];
    const DoubleBuf& gd = *in[1];
    const DoubleBuf& bd = *in[2];
    DoubleBuf out(xd.size());
    for (int ch = 0; ch < c; ++ch) {
      double mu, inv;
      if (saved->training) {
        double sum = 0.0, sq = 0.0;
        for (int b = 0; b < n; ++b) {
          const double* src = xd.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum += src[i];
            sq += src[i] * src[i];
          }
        }
        mu = sum / static_cast<double>(per_channel);
        const double var =
            std::max(0.0, sq / static_cast<double>(per_channel) - mu * mu);
        inv = 1.0 / std::sqrt(var + deps);
      } else {
        mu = saved->run_mean[ch];
        inv = 1.0 / std::sqrt(saved->run_var[ch] + deps);
      }
      for (int b = 0; b < n; ++b) {
        const double* src = xd.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
        double* dst = out.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          dst[i] = gd[ch] * (src[i] - mu) * inv + bd[ch];
      }
    }
    return out;
  };
  return node;
}

NodePtr concat_channels(NodePtr a, NodePtr b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.ndim() != 4 || bv.ndim() != 4 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " +
                                shape_str(av.shape) + " vs " + shape_str(bv.shape));
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (int bn = 0; bn < n; ++bn) {
    std::memcpy(out.ptr() + static_cast<std::size_t>(bn) * (ca + cb) * plane,
                av.ptr() + static_cast<std::size_t>(bn) * ca * plane,
                ca * plane * sizeof(float));
    std::memcpy(out.ptr() + (static_cast<std::size_t>(bn) * (ca + cb) + ca) * plane,
                bv.ptr() + static_cast<std::size_t>(bn) * cb * plane,
                cb * plane * sizeof(float));
  }
  NodePtr node = make_node(
      "concat_channels", std::move(out), {std::move(a), std::move(b)},
      [n, ca, cb, plane](Node& self) {
        NodePtr a = self.inputs[0];
        NodePtr b = self.inputs[1];
        for (int bn = 0; bn < n; ++bn) {
          if (a->requires_grad) {
            float* d = a->grad.ptr() + static_cast<std::size_t>(bn) * ca * plane;
            const float* s =
                self.grad.ptr() + static_cast<std::size_t>(bn) * (ca + cb) * plane;
            for (std::size_t i = 0; i < ca * plane; ++i) d[i] += s[i];
          }
          if (b->requires_grad) {
            float* d = b->grad.ptr() + static_cast<std::size_t>(bn) * cb * plane;
            const float* s = self.grad.ptr() +
                             (static_cast<std::size_t>(bn) * (ca + cb) + ca) * plane;
            for (std::size_t i = 0; i < cb * plane; ++i) d[i] += s[i];
          }
        }
      });
  node->fwd_double = [n, ca, cb, plane](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(static_cast<std::size_t>(n) * (ca + cb) * plane);
    for (int bn = 0; bn < n; ++bn) {
      std::copy(in[0]->begin() + static_cast<std::size_t>(bn) * ca * plane,
                in[0]->begin() + static_cast<std::size_t>(bn + 1) * ca * plane,
                out.begin() + static_cast<std::size_t>(bn) * (ca + cb) * plane);
      std::copy(in[1]->begin() + static_cast<std::size_t>(bn) * cb * plane,
                in[1]->begin() + static_cast<std::size_t>(bn + 1) * cb * plane,
                out.begin() + (static_cast<std::size_t>(bn) * (ca + cb) + ca) * plane);
    }
    return out;
  };
  return node;
}

namespace {

// double-precision scatter mean over cells with the degenerate fallback;
// mirrors cell_weighted_mean
void cell_mean_double(const DoubleBuf& q, const DoubleBuf& f, int c,
                      const GridSpec& grid, DoubleBuf& mean, DoubleBuf& mass) {
  const int h = grid.image_h, w = grid.image_w;
  const int gh = grid.grid_h(), gw = grid.grid_w();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  mean.assign(static_cast<std::size_t>(gh) * gw * c, 0.0);
  mass.assign(static_cast<std::size_t>(gh) * gw, 0.0);
  std::vector<double> own_sum(static_cast<std::size_t>(gh) * gw * c, 0.0);
  std::vector<long> own_cnt(static_cast<std::size_t>(gh) * gw, 0);
  for (int y = 0; y < h; ++y) {
    const int oi = grid.owner_row(y);
    for (int x = 0; x < w; ++x) {
      const int oj = grid.owner_col(x);
      const std::size_t pix = static_cast<std::size_t>(y) * w + x;
      const std::size_t own = static_cast<std::size_t>(oi) * gw + oj;
      ++own_cnt[own];
      for (int ch = 0; ch < c; ++ch)
        own_sum[own * c + ch] += f[ch * plane + pix];
      for (int k = 0; k < 9; ++k) {
        const int ci = oi + offset_row(k);
        const int cj = oj + offset_col(k);
        if (ci < 0 || ci >= gh || cj < 0 || cj >= gw) continue;
        const double qv = q[k * plane + pix];
        const std::size_t s = static_cast<std::size_t>(ci) * gw + cj;
        mass[s] += qv;
        for (int ch = 0; ch < c; ++ch)
          mean[s * c + ch] += qv * f[ch * plane + pix];
      }
    }
  }
  for (std::size_t s = 0; s < mass.size(); ++s) {
    if (mass[s] < kDegenerateMass) {
      for (int ch = 0; ch < c; ++ch)
        mean[s * c + ch] = own_cnt[s] ? own_sum[s * c + ch] / own_cnt[s] : 0.0;
    } else {
      for (int ch = 0; ch < c; ++ch) mean[s * c + ch] /= mass[s];
    }
  }
}

}  // namespace

NodePtr weighted_cell_mean(NodePtr q, NodePtr f, GridSpec grid) {
  const Tensor& qv = q->value;
  const Tensor& fv = f->value;
  if (qv.ndim() != 4 || qv.dim(1) != 9 || fv.ndim() != 4 ||
      qv.dim(0) != fv.dim(0) || qv.dim(2) != fv.dim(2) || qv.dim(3) != fv.dim(3))
    throw std::invalid_argument("weighted_cell_mean: need q [N,9,H,W], f [N,C,H,W]");
  if (qv.dim(2) != grid.image_h || qv.dim(3) != grid.image_w)
    throw std::invalid_argument("weighted_cell_mean: grid does not match inputs");
  const int n = qv.dim(0), c = fv.dim(1);
  const int gh = grid.grid_h(), gw = grid.grid_w();

  struct Saved {
    std::vector<Tensor> q_hw9, f_hwc, mean_hwc, mass;
  };
  auto saved = std::make_shared<Saved>();
  Tensor out({n, c, gh, gw});
  for (int b = 0; b < n; ++b) {
    Tensor q_hw9 = hwc_from_chw(slice_n(qv, b));
    Tensor f_hwc = hwc_from_chw(slice_n(fv, b));
    Tensor mass;
    Tensor mean = cell_weighted_mean(q_hw9, f_hwc, grid, &mass);
    Tensor mean_chw = chw_from_hwc(mean);
    std::memcpy(out.ptr() + static_cast<std::size_t>(b) * c * gh * gw,
                mean_chw.ptr(), mean_chw.numel() * sizeof(float));
    saved->q_hw9.push_back(std::move(q_hw9));
    saved->f_hwc.push_back(std::move(f_hwc));
    saved->mean_hwc.push_back(std::move(mean));
    saved->mass.push_back(std::move(mass));
  }
  NodePtr node =
      make_node("weighted_cell_mean", std::move(out), {std::move(q), std::move(f)},
                [n, grid, saved](Node& self) {
                  NodePtr q = self.inputs[0];
                  NodePtr f = self.inputs[1];
                  for (int b = 0; b < n; ++b) {
                    Tensor d_mean = hwc_from_chw(slice_n(self.grad, b));
                    Tensor dq_hw9({grid.image_h, grid.image_w, 9});
                    Tensor df_hwc(saved->f_hwc[b].shape);
                    assoc_detail::cell_mean_backward(
                        saved->q_hw9[b], saved->f_hwc[b], saved->mean_hwc[b],
                        saved->mass[b], d_mean, grid,
                        q->requires_grad ? &dq_hw9 : nullptr,
                        f->requires_grad ? &df_hwc : nullptr);
                    if (q->requires_grad)
                      accum_slice(q->grad, b, chw_from_hwc(dq_hw9));
                    if (f->requires_grad)
                      accum_slice(f->grad, b, chw_from_hwc(df_hwc));
                  }
                });
  node->fwd_double = [n, c, grid](const std::vector<const DoubleBuf*>& in) {
    const std::size_t plane = static_cast<std::size_t>(grid.image_h) * grid.image_w;
    const std::size_t cells = static_cast<std::size_t>(grid.grid_h()) * grid.grid_w();
    DoubleBuf out(static_cast<std::size_t>(n) * c * cells);
    for (int b = 0; b < n; ++b) {
      DoubleBuf qb(in[0]->begin() + static_cast<std::size_t>(b) * 9 * plane,
                   in[0]->begin() + static_cast<std::size_t>(b + 1) * 9 * plane);
      DoubleBuf fb(in[1]->begin() + static_cast<std::size_t>(b) * c * plane,
                   in[1]->begin() + static_cast<std::size_t>(b + 1) * c * plane);
      DoubleBuf mean, mass;
      cell_mean_double(qb, fb, c, grid, mean, mass);
      // mean is cell-major [s, c]; output is [c, s]
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t s = 0; s < cells; ++s)
          out[(static_cast<std::size_t>(b) * c + ch) * cells + s] =
              mean[s * c + ch];
    }
    return out;
  };
  return node;
}

NodePtr reconstruct_cells(NodePtr q, NodePtr u, GridSpec grid) {
  const Tensor& qv = q->value;
  const Tensor& uv = u->value;
  const int gh = grid.grid_h(), gw = grid.grid_w();
  if (qv.ndim() != 4 || qv.dim(1) != 9 || uv.ndim() != 4 ||
      qv.dim(0) != uv.dim(0) || uv.dim(2) != gh || uv.dim(3) != gw)
    throw std::invalid_argument("reconstruct_cells: need q [N,9,H,W], u [N,C,h,w]");
  if (qv.dim(2) != grid.image_h || qv.dim(3) != grid.image_w)
    throw std::invalid_argument("reconstruct_cells: grid does not match inputs");
  const int n = qv.dim(0), c = uv.dim(1);

  struct Saved {
    std::vector<Tensor> q_hw9, u_hwc;
  };
  auto saved = std::make_shared<Saved>();
  Tensor out({n, c, grid.image_h, grid.image_w});
  for (int b = 0; b < n; ++b) {
    Tensor q_hw9 = hwc_from_chw(slice_n(qv, b));
    Tensor u_hwc = hwc_from_chw(slice_n(uv, b));
    Tensor rec = cells_to_pixels(q_hw9, u_hwc, grid);
    Tensor rec_chw = chw_from_hwc(rec);
    std::memcpy(out.ptr() + static_cast<std::size_t>(b) * rec_chw.numel(),
                rec_chw.ptr(), rec_chw.numel() * sizeof(float));
    saved->q_hw9.push_back(std::move(q_hw9));
    saved->u_hwc.push_back(std::move(u_hwc));
  }
  NodePtr node =
      make_node("reconstruct_cells", std::move(out), {std::move(q), std::move(u)},
                [n, grid, saved](Node& self) {
                  NodePtr q = self.inputs[0];
                  NodePtr u = self.inputs[1];
                  for (int b = 0; b < n; ++b) {
                    Tensor d_out = hwc_from_chw(slice_n(self.grad, b));
                    Tensor dq_hw9({grid.image_h, grid.image_w, 9});
                    Tensor du_hwc(saved->u_hwc[b].shape);
                    assoc_detail::cells_to_pixels_backward(
                        saved->q_hw9[b], saved->u_hwc[b], d_out, grid,
                        q->requires_grad ? &dq_hw9 : nullptr,
                        u->requires_grad ? &du_hwc : nullptr);
                    if (q->requires_grad)
                      accum_slice(q->grad, b, chw_from_hwc(dq_hw9));
                    if (u->requires_grad)
                      accum_slice(u->grad, b, chw_from_hwc(du_hwc));
                  }
                });
  node->fwd_double = [n, c, grid](const std::vector<const DoubleBuf*>& in) {
    const int h = grid.image_h, w = grid.image_w;
    const int gh2 = grid.grid_h(), gw2 = grid.grid_w();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t cells = static_cast<std::size_t>(gh2) * gw2;
    DoubleBuf out(static_cast<std::size_t>(n) * c * plane, 0.0);
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y) {
        const int oi = y / grid.cell;
        for (int x = 0; x < w; ++x) {
          const int oj = x / grid.cell;
          const std::size_t pix = static_cast<std::size_t>(y) * w + x;
          for (int k = 0; k < 9; ++k) {
            const int ci = oi + offset_row(k);
            const int cj = oj + offset_col(k);
            if (ci < 0 || ci >= gh2 || cj < 0 || cj >= gw2) continue;
            const double qv =
                (*in[0])[(static_cast<std::size_t>(b) * 9 + k) * plane + pix];
            const std::size_t s = static_cast<std::size_t>(ci) * gw2 + cj;
            for (int ch = 0; ch < c; ++ch)
              out[(static_cast<std::size_t>(b) * c + ch) * plane + pix] +=
                  qv * (*in[1])[(static_cast<std::size_t>(b) * c + ch) * cells + s];
          }
        }
      }
    return out;
  };
  return node;
}

NodePtr l2norm_channels(NodePtr x) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 4) throw std::invalid_argument("l2norm_channels: need [N,C,H,W]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({n, 1, h, w});
  for (int b = 0; b < n; ++b)
    for (std::size_t i = 0; i < plane; ++i) {
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const float v = xv.data[(static_cast<std::size_t>(b) * c + ch) * plane + i];
        acc += static_cast<double>(v) * v;
      }
      out.data[static_cast<std::size_t>(b) * plane + i] =
          static_cast<float>(std::sqrt(acc));
    }
  NodePtr node = make_node(
      "l2norm_channels", std::move(out), {std::move(x)}, [n, c, plane](Node& self) {
        if (!self.inputs[0]->requires_grad) return;
        const Tensor& xv = self.inputs[0]->value;
        Tensor& dx = self.inputs[0]->grad;
        for (int b = 0; b < n; ++b)
          for (std::size_t i = 0; i < plane; ++i) {
            const float norm = self.value.data[static_cast<std::size_t>(b) * plane + i];
            if (norm < 1e-20f) continue;  // subgradient 0 at the kink
            const float g =
                self.grad.data[static_cast<std::size_t>(b) * plane + i] / norm;
            for (int ch = 0; ch < c; ++ch) {
              const std::size_t idx =
                  (static_cast<std::size_t>(b) * c + ch) * plane + i;
              dx.data[idx] += g * xv.data[idx];
            }
          }
      });
  node->fwd_double = [n, c, plane](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(static_cast<std::size_t>(n) * plane);
    for (int b = 0; b < n; ++b)
      for (std::size_t i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double v = (*in[0])[(static_cast<std::size_t>(b) * c + ch) * plane + i];
          acc += v * v;
        }
        out[static_cast<std::size_t>(b) * plane + i] = std::sqrt(acc);
      }
    return out;
  };
  return node;
}

NodePtr cross_entropy_channels(NodePtr x, Tensor target, float eps) {
  const Tensor& xv = x->value;
  if (!same_shape(xv, target))
    throw std::invalid_argument("cross_entropy_channels: target shape mismatch");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto tgt = std::make_shared<Tensor>(std::move(target));
  Tensor out({n, 1, h, w});
  for (int b = 0; b < n; ++b)
    for (std::size_t i = 0; i < plane; ++i) {
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t idx = (static_cast<std::size_t>(b) * c + ch) * plane + i;
        const float t = tgt->data[idx];
        if (t != 0.0f)
          acc -= static_cast<double>(t) *
                 std::log(static_cast<double>(xv.data[idx]) + eps);
      }
      out.data[static_cast<std::size_t>(b) * plane + i] = static_cast<float>(acc);
    }
  NodePtr node = make_node(
      "cross_entropy_channels", std::move(out), {std::move(x)},
      [n, c, plane, tgt, eps](Node& self) {
        if (!self.inputs[0]->requires_grad) return;
        const Tensor& xv = self.inputs[0]->value;
        Tensor& dx = self.inputs[0]->grad;
        for (int b = 0; b < n; ++b)
          for (std::size_t i = 0; i < plane; ++i) {
            const float g = self.grad.data[static_cast<std::size_t>(b) * plane + i];
            if (g == 0.0f) continue;
            for (int ch = 0; ch < c; ++ch) {
              const std::size_t idx =
                  (static_cast<std::size_t>(b) * c + ch) * plane + i;
              const float t = tgt->data[idx];
              if (t != 0.0f) dx.data[idx] -= g * t / (xv.data[idx] + eps);
            }
          }
      });
  node->fwd_double = [n, c, plane, tgt, eps](const std::vector<const DoubleBuf*>& in) {
    DoubleBuf out(static_cast<std::size_t>(n) * plane, 0.0);
    for (int b = 0; b < n; ++b)
      for (std::size_t i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t idx = (static_cast<std::size_t>(b) * c + ch) * plane + i;
          const double t = tgt->data[idx];
          if (t != 0.0)
            acc -= t * std::log((*in[0])[idx] + static_cast<double>(eps));
        }
        out[static_cast<std::size_t>(b) * plane + i] = acc;
      }
    return out;
  };
  return node;
}

}  // namespace gridpix::ad
