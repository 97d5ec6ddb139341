#pragma once
// 2-d convolution (cross-correlation, zero padding) via im2col + GEMM, plus
// its two adjoint ops. The three ops close under differentiation:
//   d conv2d / d x      -> conv2d_input_grad
//   d conv2d / d w      -> conv2d_weight_grad
//   d input_grad / d g  -> conv2d, ...
// so arbitrary-order derivatives work through any of them.

#include <vector>

#include "mtga/ops.hpp"

namespace mtga {

struct ConvGeom {
  std::int64_t in_c, in_h, in_w;
  std::int64_t out_c, kh, kw;
  std::int64_t stride, pad;
  std::int64_t out_h() const { return (in_h + 2 * pad - kh) / stride + 1; }
  std::int64_t out_w() const { return (in_w + 2 * pad - kw) / stride + 1; }
};

namespace detail {

template <typename T>
std::vector<T>& conv_scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

// col is (C*KH*KW) x (OH*OW), row-major.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  for (std::int64_t c = 0; c < g.in_c; ++c)
    for (std::int64_t u = 0; u < g.kh; ++u)
      for (std::int64_t v = 0; v < g.kw; ++v) {
        T* row = col + ((c * g.kh + u) * g.kw + v) * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
          const std::int64_t ih = i * g.stride + u - g.pad;
          if (ih < 0 || ih >= g.in_h) {
            for (std::int64_t j = 0; j < ow; ++j) row[i * ow + j] = T(0);
            continue;
          }
          const T* src = x + (c * g.in_h + ih) * g.in_w;
          for (std::int64_t j = 0; j < ow; ++j) {
            const std::int64_t iw = j * g.stride + v - g.pad;
            row[i * ow + j] = (iw >= 0 && iw < g.in_w) ? src[iw] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  for (std::int64_t c = 0; c < g.in_c; ++c)
    for (std::int64_t u = 0; u < g.kh; ++u)
      for (std::int64_t v = 0; v < g.kw; ++v) {
        const T* row = col + ((c * g.kh + u) * g.kw + v) * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
          const std::int64_t ih = i * g.stride + u - g.pad;
          if (ih < 0 || ih >= g.in_h) continue;
          T* dst = x + (c * g.in_h + ih) * g.in_w;
          for (std::int64_t j = 0; j < ow; ++j) {
            const std::int64_t iw = j * g.stride + v - g.pad;
            if (iw >= 0 && iw < g.in_w) dst[iw] += row[i * ow + j];
          }
        }
      }
}

template <typename T>
ConvGeom conv_geom_from(const Var<T>& x, const Var<T>& w, std::int64_t stride, std::int64_t pad) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4) throw std::invalid_argument("conv2d expects NCHW x OIHW");
  if (sx[1] != sw[1])
    throw std::invalid_argument("conv2d channel mismatch: input " + shape_str(sx) + " weight " +
                                shape_str(sw));
  return ConvGeom{sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], stride, pad};
}

}  // namespace detail

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, std::int64_t stride, std::int64_t pad,
                         std::int64_t in_h, std::int64_t in_w);
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, std::int64_t kh, std::int64_t kw,
                          std::int64_t stride, std::int64_t pad);

// x: [B, C, H, W]; w: [OC, C, KH, KW]; optional bias [OC].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::int64_t stride,
              std::int64_t pad) {
  const ConvGeom g = detail::conv_geom_from(x, w, stride, pad);
  const std::int64_t batch = x.shape()[0];
  const std::int64_t oh = g.out_h(), ow = g.out_w(), ohw = oh * ow;
  const std::int64_t ckk = g.in_c * g.kh * g.kw;
  Tensor<T> out = Tensor<T>::uninit(Shape{batch, g.out_c, oh, ow});
  auto& col = detail::conv_scratch<T>();
  col.resize(static_cast<std::size_t>(ckk * ohw));
  for (std::int64_t b = 0; b < batch; ++b) {
    detail::im2col(x.val().data() + b * g.in_c * g.in_h * g.in_w, g, col.data());
    kernels::gemm(false, false, g.out_c, ohw, ckk, T(1), w.val().data(), ckk, col.data(), ohw,
                  T(0), out.data() + b * g.out_c * ohw, ohw);
  }
  if (bias.defined()) {
    if (bias.shape() != Shape{g.out_c}) throw std::invalid_argument("conv2d: bad bias shape");
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
        T* dst = out.data() + (b * g.out_c + oc) * ohw;
        const T bv = bias.val()[oc];
        for (std::int64_t i = 0; i < ohw; ++i) dst[i] += bv;
      }
  }
  std::vector<Var<T>> parents = bias.defined() ? std::vector<Var<T>>{x, w, bias}
                                               : std::vector<Var<T>>{x, w};
  auto vjp = [stride, pad, g](const Var<T>& gr, const Var<T>& out) {
    const Var<T>& x = out.parent(0);
    const Var<T>& w = out.parent(1);
    std::vector<Var<T>> grads(out.num_parents());
    if (x.requires_grad()) grads[0] = conv2d_input_grad(gr, w, stride, pad, g.in_h, g.in_w);
    if (w.requires_grad()) grads[1] = conv2d_weight_grad(x, gr, g.kh, g.kw, stride, pad);
    if (out.num_parents() == 3 && out.parent(2).requires_grad()) grads[2] = channel_sum(gr);
    return grads;
  };
  return Var<T>::make_node(std::move(out), std::move(parents), std::move(vjp));
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::int64_t stride, std::int64_t pad) {
  return conv2d(x, w, Var<T>(), stride, pad);
}

// Adjoint of conv2d w.r.t. its input: gy is [B, OC, OH, OW], result [B, C, H, W].
template <typename T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, std::int64_t stride, std::int64_t pad,
                         std::int64_t in_h, std::int64_t in_w) {
  const auto& sw = w.shape();
  const auto& sg = gy.shape();
  if (sw.size() != 4 || sg.size() != 4 || sg[1] != sw[0])
    throw std::invalid_argument("conv2d_input_grad: shape mismatch");
  const ConvGeom g{sw[1], in_h, in_w, sw[0], sw[2], sw[3], stride, pad};
  const std::int64_t batch = sg[0];
  const std::int64_t ohw = g.out_h() * g.out_w();
  if (sg[2] != g.out_h() || sg[3] != g.out_w())
    throw std::invalid_argument("conv2d_input_grad: output size mismatch");
  const std::int64_t ckk = g.in_c * g.kh * g.kw;
  Tensor<T> out(Shape{batch, g.in_c, in_h, in_w});
  auto& col = detail::conv_scratch<T>();
  col.resize(static_cast<std::size_t>(ckk * ohw));
  for (std::int64_t b = 0; b < batch; ++b) {
    kernels::gemm(true, false, ckk, ohw, g.out_c, T(1), w.val().data(), ckk,
                  gy.val().data() + b * g.out_c * ohw, ohw, T(0), col.data(), ohw);
    detail::col2im_add(col.data(), g, out.data() + b * g.in_c * in_h * in_w);
  }
  auto vjp = [stride, pad, g](const Var<T>& h, const Var<T>& out) {
    const Var<T>& gy = out.parent(0);
    const Var<T>& w = out.parent(1);
    std::vector<Var<T>> grads(2);
    if (gy.requires_grad()) grads[0] = conv2d(h, w, stride, pad);
    if (w.requires_grad()) grads[1] = conv2d_weight_grad(h, gy, g.kh, g.kw, stride, pad);
    return grads;
  };
  return Var<T>::make_node(std::move(out), {gy, w}, std::move(vjp));
}

// Adjoint of conv2d w.r.t. its weights: result [OC, C, KH, KW].
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, std::int64_t kh, std::int64_t kw,
                          std::int64_t stride, std::int64_t pad) {
  const auto& sx = x.shape();
  const auto& sg = gy.shape();
  if (sx.size() != 4 || sg.size() != 4 || sx[0] != sg[0])
    throw std::invalid_argument("conv2d_weight_grad: shape mismatch");
  const ConvGeom g{sx[1], sx[2], sx[3], sg[1], kh, kw, stride, pad};
  if (sg[2] != g.out_h() || sg[3] != g.out_w())
    throw std::invalid_argument("conv2d_weight_grad: output size mismatch");
  const std::int64_t batch = sx[0];
  const std::int64_t ohw = g.out_h() * g.out_w();
  const std::int64_t ckk = g.in_c * kh * kw;
  Tensor<T> out(Shape{g.out_c, g.in_c, kh, kw});
  auto& col = detail::conv_scratch<T>();
  col.resize(static_cast<std::size_t>(ckk * ohw));
  for (std::int64_t b = 0; b < batch; ++b) {
    detail::im2col(x.val().data() + b * g.in_c * g.in_h * g.in_w, g, col.data());
    kernels::gemm(false, true, g.out_c, ckk, ohw, T(1), gy.val().data() + b * g.out_c * ohw, ohw,
                  col.data(), ohw, T(1), out.data(), ckk);
  }
  auto vjp = [stride, pad, g](const Var<T>& hw, const Var<T>& out) {
    const Var<T>& x = out.parent(0);
    const Var<T>& gy = out.parent(1);
    std::vector<Var<T>> grads(2);
    if (x.requires_grad()) grads[0] = conv2d_input_grad(gy, hw, stride, pad, g.in_h, g.in_w);
    if (gy.requires_grad()) grads[1] = conv2d(x, hw, stride, pad);
    return grads;
  };
  return Var<T>::make_node(std::move(out), {x, gy}, std::move(vjp));
}

}  // namespace mtga
