#include "mtga/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace mtga {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const Rgb8Image& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.interleaved.data() + y * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Rgb8Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
    throw std::runtime_error("not a PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng error reading " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalize everything to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  Rgb8Image img;
  img.height = static_cast<std::int64_t>(png_get_image_height(png, info));
  img.width = static_cast<std::int64_t>(png_get_image_width(png, info));
  img.interleaved.resize(static_cast<std::size_t>(img.height * img.width * 3));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = img.interleaved.data() + y * img.width * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Rgb8Image to_rgb8(const Tensor<float>& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3) throw std::invalid_argument("to_rgb8 expects [3,H,W]");
  Rgb8Image img;
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  img.interleaved.resize(static_cast<std::size_t>(img.height * img.width * 3));
  const std::int64_t hw = img.height * img.width;
  for (std::int64_t i = 0; i < hw; ++i)
    for (std::int64_t c = 0; c < 3; ++c) {
      float v = chw[c * hw + i];
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      img.interleaved[static_cast<std::size_t>(i * 3 + c)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  return img;
}

Tensor<float> to_float(const Rgb8Image& img) {
  Tensor<float> out(Shape{3, img.height, img.width});
  const std::int64_t hw = img.height * img.width;
  for (std::int64_t i = 0; i < hw; ++i)
    for (std::int64_t c = 0; c < 3; ++c)
      out[c * hw + i] = static_cast<float>(img.interleaved[static_cast<std::size_t>(i * 3 + c)]) / 255.0f;
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& chw, std::int64_t out_h, std::int64_t out_w) {
  if (chw.ndim() != 3) throw std::invalid_argument("resize_bilinear expects [C,H,W]");
  const std::int64_t c = chw.dim(0), in_h = chw.dim(1), in_w = chw.dim(2);
  if (in_h == out_h && in_w == out_w) return chw;
  Tensor<float> out(Shape{c, out_h, out_w});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = fy < 0 ? 0 : fy;
    std::int64_t y0 = static_cast<std::int64_t>(fy);
    if (y0 > in_h - 1) y0 = in_h - 1;
    const std::int64_t y1 = y0 + 1 < in_h ? y0 + 1 : in_h - 1;
    const double ty = fy - static_cast<double>(y0);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = fx < 0 ? 0 : fx;
      std::int64_t x0 = static_cast<std::int64_t>(fx);
      if (x0 > in_w - 1) x0 = in_w - 1;
      const std::int64_t x1 = x0 + 1 < in_w ? x0 + 1 : in_w - 1;
      const double tx = fx - static_cast<double>(x0);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double v00 = chw[(ch * in_h + y0) * in_w + x0];
        const double v01 = chw[(ch * in_h + y0) * in_w + x1];
        const double v10 = chw[(ch * in_h + y1) * in_w + x0];
        const double v11 = chw[(ch * in_h + y1) * in_w + x1];
        const double v0 = v00 + (v01 - v00) * tx;
        const double v1 = v10 + (v11 - v10) * tx;
        out[(ch * out_h + oy) * out_w + ox] = static_cast<float>(v0 + (v1 - v0) * ty);
      }
    }
  }
  return out;
}

}  // namespace mtga
