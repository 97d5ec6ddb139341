#pragma once
// Perturbation random erasing: block-structured binary masks on a 16x16 grid.
// With probability p a mask erases exactly round-half-up(m * #cells) grid
// cells chosen uniformly without replacement; otherwise it is all ones. The
// grid is upscaled to H x W by nearest neighbor (each cell -> 16x16 block).

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mtga/ops.hpp"
#include "mtga/rng.hpp"

namespace mtga::pre {

inline constexpr std::int64_t kCell = 16;

struct RandomPattern {
  std::int64_t h = 0, w = 0;
  std::int64_t grid_h = 0, grid_w = 0;
  std::vector<std::uint8_t> cell_mask;  // grid_h * grid_w, 1 = keep
  std::vector<std::pair<std::int64_t, std::int64_t>> erased_cells;

  bool kept(std::int64_t y, std::int64_t x) const {
    return cell_mask[static_cast<std::size_t>((y / kCell) * grid_w + (x / kCell))] != 0;
  }
};

inline std::int64_t round_half_up(double v) { return static_cast<std::int64_t>(std::floor(v + 0.5)); }

inline RandomPattern sample_pattern(std::int64_t h, std::int64_t w, double p, double m, Rng& rng) {
  if (h % kCell != 0 || w % kCell != 0)
    throw std::invalid_argument("sample_pattern: H and W must be divisible by 16");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("sample_pattern: p must be in [0,1]");
  if (m < 0.0 || m > 1.0) throw std::invalid_argument("sample_pattern: m must be in [0,1]");
  RandomPattern pat;
  pat.h = h;
  pat.w = w;
  pat.grid_h = h / kCell;
  pat.grid_w = w / kCell;
  pat.cell_mask.assign(static_cast<std::size_t>(pat.grid_h * pat.grid_w), 1);
  if (rng.uniform() < p) {
    const std::int64_t total = pat.grid_h * pat.grid_w;
    const std::int64_t k = round_half_up(m * static_cast<double>(total));
    for (std::int64_t cell : rng.sample_without_replacement(total, k)) {
      pat.cell_mask[static_cast<std::size_t>(cell)] = 0;
      pat.erased_cells.emplace_back(cell / pat.grid_w, cell % pat.grid_w);
    }
  }
  return pat;
}

// Full-resolution [H, W] mask.
template <typename T>
Tensor<T> mask_tensor(const RandomPattern& pat) {
  Tensor<T> t(Shape{pat.h, pat.w});
  for (std::int64_t y = 0; y < pat.h; ++y)
    for (std::int64_t x = 0; x < pat.w; ++x) t[y * pat.w + x] = pat.kept(y, x) ? T(1) : T(0);
  return t;
}

// [B, 3, H, W] mask with one pattern per image, broadcast over channels.
template <typename T>
Tensor<T> batch_mask_tensor(const std::vector<RandomPattern>& pats, std::int64_t channels = 3) {
  if (pats.empty()) throw std::invalid_argument("batch_mask_tensor: empty pattern list");
  const std::int64_t h = pats[0].h, w = pats[0].w;
  Tensor<T> t(Shape{static_cast<std::int64_t>(pats.size()), channels, h, w});
  for (std::size_t b = 0; b < pats.size(); ++b) {
    if (pats[b].h != h || pats[b].w != w)
      throw std::invalid_argument("batch_mask_tensor: mixed pattern sizes");
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const T v = pats[b].kept(y, x) ? T(1) : T(0);
        for (std::int64_t c = 0; c < channels; ++c)
          t[((static_cast<std::int64_t>(b) * channels + c) * h + y) * w + x] = v;
      }
  }
  return t;
}

// Hadamard product of the perturbation with the pattern (one pattern for the
// whole batch). The mask is a constant: gradients at erased pixels are zero.
template <typename T>
Var<T> erase(const Var<T>& delta, const RandomPattern& pat) {
  const auto& s = delta.shape();
  if (s.size() != 4 || s[2] != pat.h || s[3] != pat.w)
    throw std::invalid_argument("erase: pattern shape does not match perturbation");
  std::vector<RandomPattern> pats(static_cast<std::size_t>(s[0]), pat);
  return mul(delta, Var<T>::constant(batch_mask_tensor<T>(pats, s[1])));
}

// Per-image patterns.
template <typename T>
Var<T> erase(const Var<T>& delta, const std::vector<RandomPattern>& pats) {
  const auto& s = delta.shape();
  if (s.size() != 4 || static_cast<std::int64_t>(pats.size()) != s[0])
    throw std::invalid_argument("erase: need one pattern per image");
  for (const auto& p : pats)
    if (p.h != s[2] || p.w != s[3])
      throw std::invalid_argument("erase: pattern shape does not match perturbation");
  return mul(delta, Var<T>::constant(batch_mask_tensor<T>(pats, s[1])));
}

}  // namespace mtga::pre
