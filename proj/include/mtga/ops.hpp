#pragma once
// Differentiable tensor operations. Each op computes its value eagerly via
// the kernel layer and registers a vjp written in terms of other ops, so
// derivatives of any order are available. Reductions accumulate in double
// with a fixed sequential order regardless of the active kernel ISA.

#include <cmath>
#include <vector>

#include "mtga/autodiff.hpp"
#include "mtga/kernels.hpp"
#include "mtga/tensor.hpp"

namespace mtga {

// --------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  kernels::add(out.numel(), a.val().data(), b.val().data(), out.data());
  return Var<T>::make_node(std::move(out), {a, b},
                           [](const Var<T>& g, const Var<T>&) {
                             return std::vector<Var<T>>{g, g};
                           });
}

template <typename T>
Var<T> scale(const Var<T>& a, double c);

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, -1.0);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  kernels::sub(out.numel(), a.val().data(), b.val().data(), out.data());
  return Var<T>::make_node(std::move(out), {a, b},
                           [](const Var<T>& g, const Var<T>&) {
                             return std::vector<Var<T>>{g, neg(g)};
                           });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  kernels::mul(out.numel(), a.val().data(), b.val().data(), out.data());
  return Var<T>::make_node(std::move(out), {a, b},
                           [](const Var<T>& g, const Var<T>& out) {
                             return std::vector<Var<T>>{
                                 out.parent(0).requires_grad() ? mul(g, out.parent(1)) : Var<T>(),
                                 out.parent(1).requires_grad() ? mul(g, out.parent(0)) : Var<T>()};
                           });
}

template <typename T>
Var<T> scale(const Var<T>& a, double c) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  kernels::scale_shift(out.numel(), static_cast<T>(c), T(0), a.val().data(), out.data());
  return Var<T>::make_node(std::move(out), {a},
                           [c](const Var<T>& g, const Var<T>&) {
                             return std::vector<Var<T>>{scale(g, c)};
                           });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double c) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  kernels::scale_shift(out.numel(), T(1), static_cast<T>(c), a.val().data(), out.data());
  return Var<T>::make_node(std::move(out), {a},
                           [](const Var<T>& g, const Var<T>&) {
                             return std::vector<Var<T>>{g};
                           });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  kernels::relu(out.numel(), a.val().data(), out.data());
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{relu_gate(g, out.parent(0))};
  });
}

// g where x > 0, else 0. Differentiable in g; x enters only through the mask.
template <typename T>
Var<T> relu_gate(const Var<T>& g, const Var<T>& x) {
  check_same_shape(g.val(), x.val(), "relu_gate");
  Tensor<T> out = Tensor<T>::uninit(g.shape());
  kernels::relu_mask_mul(out.numel(), g.val().data(), x.val().data(), out.data());
  return Var<T>::make_node(std::move(out), {g, x}, [](const Var<T>& gg, const Var<T>& out) {
    return std::vector<Var<T>>{relu_gate(gg, out.parent(1)), Var<T>()};
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* x = a.val().data();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x[i]);
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    // g * (1 - y^2)
    Var<T> y = out;
    return std::vector<Var<T>>{mul(g, add_scalar(neg(mul(y, y)), 1.0))};
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* x = a.val().data();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    // g * y * (1 - y)
    Var<T> y = out;
    return std::vector<Var<T>>{mul(g, mul(y, add_scalar(neg(y), 1.0)))};
  });
}

template <typename T>
Var<T> vexp(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* x = a.val().data();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(x[i]);
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{mul(g, out)};
  });
}

template <typename T>
Var<T> recip(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* x = a.val().data();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / x[i];
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{neg(mul(g, mul(out, out)))};
  });
}

// log(x + pad); pad guards the GAN losses against log(0).
template <typename T>
Var<T> log_shifted(const Var<T>& a, double pad) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* x = a.val().data();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(x[i] + static_cast<T>(pad));
  return Var<T>::make_node(std::move(out), {a}, [pad](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{mul(g, recip(add_scalar(out.parent(0), pad)))};
  });
}

template <typename T>
Var<T> max_scalar(const Var<T>& a, double c) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* x = a.val().data();
  const T cv = static_cast<T>(c);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] > cv ? x[i] : cv;
  return Var<T>::make_node(std::move(out), {a}, [c](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{gt_scalar_gate(g, out.parent(0), c)};
  });
}

// g where x > c, else 0.
template <typename T>
Var<T> gt_scalar_gate(const Var<T>& g, const Var<T>& x, double c) {
  check_same_shape(g.val(), x.val(), "gt_scalar_gate");
  Tensor<T> out = Tensor<T>::uninit(g.shape());
  const T* gv = g.val().data();
  const T* xv = x.val().data();
  const T cv = static_cast<T>(c);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > cv ? gv[i] : T(0);
  return Var<T>::make_node(std::move(out), {g, x}, [c](const Var<T>& gg, const Var<T>& out) {
    return std::vector<Var<T>>{gt_scalar_gate(gg, out.parent(1), c), Var<T>()};
  });
}

// Forward is exact sqrt; the vjp clamps the denominator so the derivative
// stays finite when the argument touches zero.
template <typename T>
Var<T> sqrt_guarded(const Var<T>& a, double guard = 1e-20) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* x = a.val().data();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(x[i]);
  return Var<T>::make_node(std::move(out), {a}, [guard](const Var<T>& g, const Var<T>& out) {
    Var<T> denom = sqrt_guarded(max_scalar(out.parent(0), guard), guard);
    return std::vector<Var<T>>{scale(mul(g, recip(denom)), 0.5)};
  });
}

template <typename T>
Var<T> clamp(const Var<T>& a, double lo, double hi) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* x = a.val().data();
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] < l ? l : (x[i] > h ? h : x[i]);
  return Var<T>::make_node(std::move(out), {a}, [lo, hi](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{interval_gate(g, out.parent(0), lo, hi)};
  });
}

// g where lo < x < hi, else 0 (the clamp subgradient).
template <typename T>
Var<T> interval_gate(const Var<T>& g, const Var<T>& x, double lo, double hi) {
  check_same_shape(g.val(), x.val(), "interval_gate");
  Tensor<T> out = Tensor<T>::uninit(g.shape());
  const T* gv = g.val().data();
  const T* xv = x.val().data();
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = (xv[i] > l && xv[i] < h) ? gv[i] : T(0);
  return Var<T>::make_node(std::move(out), {g, x}, [lo, hi](const Var<T>& gg, const Var<T>& out) {
    return std::vector<Var<T>>{interval_gate(gg, out.parent(1), lo, hi), Var<T>()};
  });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(kernels::stable_sum(a.numel(), a.val().data())));
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{tile_to(g, out.parent(0).shape())};
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// Broadcast a scalar to an arbitrary shape.
template <typename T>
Var<T> tile_to(const Var<T>& s, const Shape& shape) {
  if (s.numel() != 1) throw std::invalid_argument("tile_to expects a scalar");
  Tensor<T> out = Tensor<T>::full(shape, s.val()[0]);
  return Var<T>::make_node(std::move(out), {s}, [](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{sum_all(g)};
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.val().reshaped(std::move(shape));
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{reshape(g, out.parent(0).shape())};
  });
}

// ------------------------------------------------------------------- matmul

// y = op(a) * op(b); op(a) is M x K, op(b) is K x N.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2) throw std::invalid_argument("matmul expects 2-d tensors");
  const std::int64_t m = ta ? sa[1] : sa[0];
  const std::int64_t ka = ta ? sa[0] : sa[1];
  const std::int64_t kb = tb ? sb[1] : sb[0];
  const std::int64_t n = tb ? sb[0] : sb[1];
  if (ka != kb)
    throw std::invalid_argument("matmul inner dimension mismatch " + shape_str(sa) + " x " +
                                shape_str(sb));
  Tensor<T> out = Tensor<T>::uninit(Shape{m, n});
  kernels::gemm(ta, tb, m, n, ka, T(1), a.val().data(), sa[1], b.val().data(), sb[1], T(0),
                out.data(), n);
  return Var<T>::make_node(std::move(out), {a, b}, [ta, tb](const Var<T>& g, const Var<T>& out) {
    const Var<T>& a = out.parent(0);
    const Var<T>& b = out.parent(1);
    Var<T> da, db;
    if (a.requires_grad()) da = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
    if (b.requires_grad()) db = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
    return std::vector<Var<T>>{da, db};
  });
}

// ------------------------------------------------- 2-d (rows x cols) helpers

template <typename T>
Var<T> row_sum(const Var<T>& a) {
  const auto& s = a.shape();
  if (s.size() != 2) throw std::invalid_argument("row_sum expects 2-d");
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0]});
  for (std::int64_t r = 0; r < s[0]; ++r)
    out[r] = static_cast<T>(kernels::stable_sum(s[1], a.val().data() + r * s[1]));
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{tile_cols(g, out.parent(0).shape()[1])};
  });
}

template <typename T>
Var<T> col_sum(const Var<T>& a) {
  const auto& s = a.shape();
  if (s.size() != 2) throw std::invalid_argument("col_sum expects 2-d");
  Tensor<T> out = Tensor<T>::uninit(Shape{s[1]});
  std::vector<double> acc(static_cast<std::size_t>(s[1]), 0.0);
  for (std::int64_t r = 0; r < s[0]; ++r)
    for (std::int64_t c = 0; c < s[1]; ++c) acc[static_cast<std::size_t>(c)] += a.val().at(r, c);
  for (std::int64_t c = 0; c < s[1]; ++c) out[c] = static_cast<T>(acc[static_cast<std::size_t>(c)]);
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{tile_rows(g, out.parent(0).shape()[0])};
  });
}

// v is a length-C vector; result repeats it as R rows.
template <typename T>
Var<T> tile_rows(const Var<T>& v, std::int64_t rows) {
  const auto& s = v.shape();
  if (s.size() != 1) throw std::invalid_argument("tile_rows expects 1-d");
  Tensor<T> out = Tensor<T>::uninit(Shape{rows, s[0]});
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < s[0]; ++c) out.at(r, c) = v.val()[c];
  return Var<T>::make_node(std::move(out), {v}, [](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{col_sum(g)};
  });
}

// v is a length-R vector; result repeats it as C columns.
template <typename T>
Var<T> tile_cols(const Var<T>& v, std::int64_t cols) {
  const auto& s = v.shape();
  if (s.size() != 1) throw std::invalid_argument("tile_cols expects 1-d");
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0], cols});
  for (std::int64_t r = 0; r < s[0]; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out.at(r, c) = v.val()[r];
  return Var<T>::make_node(std::move(out), {v}, [](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{row_sum(g)};
  });
}

template <typename T>
Var<T> gather_cols(const Var<T>& a, const std::vector<std::int64_t>& idx) {
  const auto& s = a.shape();
  if (s.size() != 2 || static_cast<std::int64_t>(idx.size()) != s[0])
    throw std::invalid_argument("gather_cols: bad index vector");
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0]});
  for (std::int64_t r = 0; r < s[0]; ++r) out[r] = a.val().at(r, idx[static_cast<std::size_t>(r)]);
  return Var<T>::make_node(std::move(out), {a}, [idx](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{scatter_cols(g, idx, out.parent(0).shape()[1])};
  });
}

template <typename T>
Var<T> scatter_cols(const Var<T>& v, const std::vector<std::int64_t>& idx, std::int64_t cols) {
  const auto& s = v.shape();
  if (s.size() != 1 || static_cast<std::int64_t>(idx.size()) != s[0])
    throw std::invalid_argument("scatter_cols: bad index vector");
  Tensor<T> out(Shape{s[0], cols});
  for (std::int64_t r = 0; r < s[0]; ++r) out.at(r, idx[static_cast<std::size_t>(r)]) = v.val()[r];
  return Var<T>::make_node(std::move(out), {v}, [idx](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{gather_cols(g, idx)};
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::int64_t c0, std::int64_t c1) {
  const auto& s = a.shape();
  if (s.size() != 2 || c0 < 0 || c1 > s[1] || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range");
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0], c1 - c0});
  for (std::int64_t r = 0; r < s[0]; ++r)
    for (std::int64_t c = c0; c < c1; ++c) out.at(r, c - c0) = a.val().at(r, c);
  return Var<T>::make_node(std::move(out), {a}, [c0](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{embed_cols(g, c0, out.parent(0).shape()[1])};
  });
}

template <typename T>
Var<T> embed_cols(const Var<T>& a, std::int64_t c0, std::int64_t total_cols) {
  const auto& s = a.shape();
  if (s.size() != 2 || c0 < 0 || c0 + s[1] > total_cols)
    throw std::invalid_argument("embed_cols: bad range");
  Tensor<T> out(Shape{s[0], total_cols});
  for (std::int64_t r = 0; r < s[0]; ++r)
    for (std::int64_t c = 0; c < s[1]; ++c) out.at(r, c0 + c) = a.val().at(r, c);
  return Var<T>::make_node(std::move(out), {a}, [c0](const Var<T>& g, const Var<T>& out) {
    const std::int64_t w = out.parent(0).shape()[1];
    return std::vector<Var<T>>{slice_cols(g, c0, c0 + w)};
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const std::int64_t rows = parts[0].shape()[0];
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != rows)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += p.shape()[1];
  }
  Tensor<T> out = Tensor<T>::uninit(Shape{rows, total});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.shape()[1];
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < w; ++c) out.at(r, off + c) = p.val().at(r, c);
    off += w;
  }
  return Var<T>::make_node(std::move(out), parts, [](const Var<T>& g, const Var<T>& out) {
    std::vector<Var<T>> grads;
    std::int64_t off = 0;
    for (std::size_t i = 0; i < out.num_parents(); ++i) {
      const std::int64_t w = out.parent(i).shape()[1];
      grads.push_back(out.parent(i).requires_grad() ? slice_cols(g, off, off + w) : Var<T>());
      off += w;
    }
    return grads;
  });
}

// ------------------------------------------------------- NCHW channel/spatial

namespace detail {
template <typename T>
void expect_4d(const Var<T>& a, const char* what) {
  if (a.shape().size() != 4) throw std::invalid_argument(std::string(what) + " expects NCHW");
}
}  // namespace detail

template <typename T>
Var<T> channel_sum(const Var<T>& a) {
  detail::expect_4d(a, "channel_sum");
  const auto& s = a.shape();
  const std::int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  Tensor<T> out = Tensor<T>::uninit(Shape{c});
  std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
  const T* x = a.val().data();
  for (std::int64_t ib = 0; ib < b; ++ib)
    for (std::int64_t ic = 0; ic < c; ++ic)
      acc[static_cast<std::size_t>(ic)] += kernels::stable_sum(hw, x + (ib * c + ic) * hw);
  for (std::int64_t ic = 0; ic < c; ++ic) out[ic] = static_cast<T>(acc[static_cast<std::size_t>(ic)]);
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    const auto& s = out.parent(0).shape();
    return std::vector<Var<T>>{broadcast_channel(g, s[0], s[2], s[3])};
  });
}

template <typename T>
Var<T> broadcast_channel(const Var<T>& v, std::int64_t b, std::int64_t h, std::int64_t w) {
  if (v.shape().size() != 1) throw std::invalid_argument("broadcast_channel expects 1-d");
  const std::int64_t c = v.shape()[0];
  Tensor<T> out = Tensor<T>::uninit(Shape{b, c, h, w});
  T* o = out.data();
  const std::int64_t hw = h * w;
  for (std::int64_t ib = 0; ib < b; ++ib)
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const T val = v.val()[ic];
      T* dst = o + (ib * c + ic) * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = val;
    }
  return Var<T>::make_node(std::move(out), {v}, [](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{channel_sum(g)};
  });
}

template <typename T>
Var<T> spatial_sum(const Var<T>& a) {
  detail::expect_4d(a, "spatial_sum");
  const auto& s = a.shape();
  const std::int64_t bc = s[0] * s[1], hw = s[2] * s[3];
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0], s[1]});
  for (std::int64_t i = 0; i < bc; ++i)
    out[i] = static_cast<T>(kernels::stable_sum(hw, a.val().data() + i * hw));
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    const auto& s = out.parent(0).shape();
    return std::vector<Var<T>>{broadcast_spatial(g, s[2], s[3])};
  });
}

template <typename T>
Var<T> broadcast_spatial(const Var<T>& m, std::int64_t h, std::int64_t w) {
  if (m.shape().size() != 2) throw std::invalid_argument("broadcast_spatial expects 2-d");
  const std::int64_t bc = m.numel(), hw = h * w;
  Tensor<T> out = Tensor<T>::uninit(Shape{m.shape()[0], m.shape()[1], h, w});
  for (std::int64_t i = 0; i < bc; ++i) {
    T* dst = out.data() + i * hw;
    const T val = m.val()[i];
    for (std::int64_t j = 0; j < hw; ++j) dst[j] = val;
  }
  return Var<T>::make_node(std::move(out), {m}, [](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{spatial_sum(g)};
  });
}

// Sum over rows [r0, r1) and all columns -> [B, C].
template <typename T>
Var<T> row_range_sum(const Var<T>& a, std::int64_t r0, std::int64_t r1) {
  detail::expect_4d(a, "row_range_sum");
  const auto& s = a.shape();
  if (r0 < 0 || r1 > s[2] || r0 >= r1) throw std::invalid_argument("row_range_sum: bad row range");
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0], s[1]});
  for (std::int64_t ib = 0; ib < s[0]; ++ib)
    for (std::int64_t ic = 0; ic < s[1]; ++ic) {
      double acc = 0.0;
      for (std::int64_t ih = r0; ih < r1; ++ih)
        acc += kernels::stable_sum(s[3], &a.val().at(ib, ic, ih, 0));
      out.at(ib, ic) = static_cast<T>(acc);
    }
  return Var<T>::make_node(std::move(out), {a}, [r0, r1](const Var<T>& g, const Var<T>& out) {
    const auto& s = out.parent(0).shape();
    return std::vector<Var<T>>{broadcast_row_range(g, r0, r1, s[2], s[3])};
  });
}

template <typename T>
Var<T> broadcast_row_range(const Var<T>& m, std::int64_t r0, std::int64_t r1, std::int64_t h,
                           std::int64_t w) {
  if (m.shape().size() != 2) throw std::invalid_argument("broadcast_row_range expects 2-d");
  Tensor<T> out(Shape{m.shape()[0], m.shape()[1], h, w});
  for (std::int64_t ib = 0; ib < m.shape()[0]; ++ib)
    for (std::int64_t ic = 0; ic < m.shape()[1]; ++ic) {
      const T val = m.val().at(ib, ic);
      for (std::int64_t ih = r0; ih < r1; ++ih)
        for (std::int64_t iw = 0; iw < w; ++iw) out.at(ib, ic, ih, iw) = val;
    }
  return Var<T>::make_node(std::move(out), {m}, [r0, r1](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{row_range_sum(g, r0, r1)};
  });
}

template <typename T>
Var<T> sum_channels_keepdim(const Var<T>& a) {
  detail::expect_4d(a, "sum_channels_keepdim");
  const auto& s = a.shape();
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0], 1, s[2], s[3]});
  const std::int64_t hw = s[2] * s[3];
  for (std::int64_t ib = 0; ib < s[0]; ++ib)
    for (std::int64_t i = 0; i < hw; ++i) {
      double acc = 0.0;
      for (std::int64_t ic = 0; ic < s[1]; ++ic) acc += a.val().data()[(ib * s[1] + ic) * hw + i];
      out.data()[ib * hw + i] = static_cast<T>(acc);
    }
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>& out) {
    return std::vector<Var<T>>{broadcast_channels_like(g, out.parent(0).shape()[1])};
  });
}

template <typename T>
Var<T> broadcast_channels_like(const Var<T>& a, std::int64_t c) {
  detail::expect_4d(a, "broadcast_channels_like");
  const auto& s = a.shape();
  if (s[1] != 1) throw std::invalid_argument("broadcast_channels_like expects C=1");
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0], c, s[2], s[3]});
  const std::int64_t hw = s[2] * s[3];
  for (std::int64_t ib = 0; ib < s[0]; ++ib)
    for (std::int64_t ic = 0; ic < c; ++ic)
      for (std::int64_t i = 0; i < hw; ++i)
        out.data()[(ib * c + ic) * hw + i] = a.val().data()[ib * hw + i];
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{sum_channels_keepdim(g)};
  });
}

// y = x * scale[c] + shift[c], one fused pass over NCHW.
template <typename T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& scale_c, const Var<T>& shift_c) {
  detail::expect_4d(x, "channel_affine");
  const auto& s = x.shape();
  if (scale_c.shape() != Shape{s[1]} || shift_c.shape() != Shape{s[1]})
    throw std::invalid_argument("channel_affine: scale/shift must be [C]");
  Tensor<T> out = Tensor<T>::uninit(s);
  const std::int64_t hw = s[2] * s[3];
  for (std::int64_t ib = 0; ib < s[0]; ++ib)
    for (std::int64_t ic = 0; ic < s[1]; ++ic)
      kernels::scale_shift(hw, scale_c.val()[ic], shift_c.val()[ic],
                           x.val().data() + (ib * s[1] + ic) * hw,
                           out.data() + (ib * s[1] + ic) * hw);
  return Var<T>::make_node(std::move(out), {x, scale_c, shift_c},
                           [](const Var<T>& g, const Var<T>& out) {
                             const Var<T>& x = out.parent(0);
                             const Var<T>& sc = out.parent(1);
                             std::vector<Var<T>> grads(3);
                             if (x.requires_grad()) {
                               Var<T> zero = Var<T>::constant(Tensor<T>::zeros(sc.shape()));
                               grads[0] = channel_affine(g, sc, zero);
                             }
                             if (sc.requires_grad()) grads[1] = channel_dot(g, x);
                             if (out.parent(2).requires_grad()) grads[2] = channel_sum(g);
                             return grads;
                           });
}

// Per-channel sum over B,H,W of a .* b -> [C].
template <typename T>
Var<T> channel_dot(const Var<T>& a, const Var<T>& b) {
  detail::expect_4d(a, "channel_dot");
  check_same_shape(a.val(), b.val(), "channel_dot");
  const auto& s = a.shape();
  const std::int64_t hw = s[2] * s[3];
  Tensor<T> out = Tensor<T>::uninit(Shape{s[1]});
  std::vector<double> acc(static_cast<std::size_t>(s[1]), 0.0);
  for (std::int64_t ib = 0; ib < s[0]; ++ib)
    for (std::int64_t ic = 0; ic < s[1]; ++ic) {
      const T* pa = a.val().data() + (ib * s[1] + ic) * hw;
      const T* pb = b.val().data() + (ib * s[1] + ic) * hw;
      double local = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) local += static_cast<double>(pa[i]) * pb[i];
      acc[static_cast<std::size_t>(ic)] += local;
    }
  for (std::int64_t ic = 0; ic < s[1]; ++ic) out[ic] = static_cast<T>(acc[static_cast<std::size_t>(ic)]);
  return Var<T>::make_node(std::move(out), {a, b}, [](const Var<T>& g, const Var<T>& out) {
    const auto& sb = out.parent(0).shape();
    std::vector<Var<T>> grads(2);
    if (out.parent(0).requires_grad())
      grads[0] = mul(out.parent(1), broadcast_channel(g, sb[0], sb[2], sb[3]));
    if (out.parent(1).requires_grad())
      grads[1] = mul(out.parent(0), broadcast_channel(g, sb[0], sb[2], sb[3]));
    return grads;
  });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& a) {
  detail::expect_4d(a, "upsample_nearest2");
  const auto& s = a.shape();
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0], s[1], s[2] * 2, s[3] * 2});
  for (std::int64_t bc = 0; bc < s[0] * s[1]; ++bc) {
    const T* src = a.val().data() + bc * s[2] * s[3];
    T* dst = out.data() + bc * s[2] * s[3] * 4;
    for (std::int64_t ih = 0; ih < s[2]; ++ih)
      for (std::int64_t iw = 0; iw < s[3]; ++iw) {
        const T v = src[ih * s[3] + iw];
        T* d0 = dst + (2 * ih) * (2 * s[3]) + 2 * iw;
        T* d1 = d0 + 2 * s[3];
        d0[0] = d0[1] = d1[0] = d1[1] = v;
      }
  }
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{block_sum2(g)};
  });
}

template <typename T>
Var<T> block_sum2(const Var<T>& a) {
  detail::expect_4d(a, "block_sum2");
  const auto& s = a.shape();
  if (s[2] % 2 || s[3] % 2) throw std::invalid_argument("block_sum2 expects even H, W");
  Tensor<T> out = Tensor<T>::uninit(Shape{s[0], s[1], s[2] / 2, s[3] / 2});
  for (std::int64_t bc = 0; bc < s[0] * s[1]; ++bc) {
    const T* src = a.val().data() + bc * s[2] * s[3];
    T* dst = out.data() + bc * (s[2] / 2) * (s[3] / 2);
    for (std::int64_t oh = 0; oh < s[2] / 2; ++oh)
      for (std::int64_t ow = 0; ow < s[3] / 2; ++ow) {
        const T* s0 = src + (2 * oh) * s[3] + 2 * ow;
        const T* s1 = s0 + s[3];
        dst[oh * (s[3] / 2) + ow] = s0[0] + s0[1] + s1[0] + s1[1];
      }
  }
  return Var<T>::make_node(std::move(out), {a}, [](const Var<T>& g, const Var<T>&) {
    return std::vector<Var<T>>{upsample_nearest2(g)};
  });
}

}  // namespace mtga
