#pragma once
// 8-bit RGB PNG read/write plus bilinear resize, used by the dataset
// generator and the external-dataset loader.

#include <cstdint>
#include <string>
#include <vector>

#include "mtga/tensor.hpp"

namespace mtga {

struct Rgb8Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> interleaved;  // H*W*3, row-major RGB
};

void write_png(const std::string& path, const Rgb8Image& img);
Rgb8Image read_png(const std::string& path);

// [3, H, W] float in [0,1] <-> 8-bit, round-to-nearest.
Rgb8Image to_rgb8(const Tensor<float>& chw);
Tensor<float> to_float(const Rgb8Image& img);

// Bilinear resample of a [3, H, W] tensor; identity when sizes already match.
Tensor<float> resize_bilinear(const Tensor<float>& chw, std::int64_t out_h, std::int64_t out_w);

}  // namespace mtga
