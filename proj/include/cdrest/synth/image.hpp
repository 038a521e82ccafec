#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "cdrest/core/tensor.hpp"

namespace cdrest {

// Images are CHW float tensors in [0,1], RGB.
using Image = Tensor<float>;

inline Image make_image(idx h, idx w) { return Image::zeros({3, h, w}); }

inline void clamp01(Image& img) {
  for (idx i = 0; i < img.numel(); ++i) img[i] = std::min(1.0f, std::max(0.0f, img[i]));
}

inline std::vector<std::uint8_t> image_to_u8(const Image& img) {
  const idx H = img.dim(1), W = img.dim(2);
  std::vector<std::uint8_t> buf(std::size_t(H * W * 3));
  for (idx y = 0; y < H; ++y)
    for (idx x = 0; x < W; ++x)
      for (idx c = 0; c < 3; ++c) {
        float v = img[(c * H + y) * W + x];
        v = std::min(1.0f, std::max(0.0f, v));
        buf[std::size_t((y * W + x) * 3 + c)] = std::uint8_t(std::lround(v * 255.0f));
      }
  return buf;
}

inline Image image_from_u8(const std::uint8_t* buf, idx H, idx W, int channels) {
  Image img = make_image(H, W);
  for (idx y = 0; y < H; ++y)
    for (idx x = 0; x < W; ++x)
      for (idx c = 0; c < 3; ++c) {
        const idx sc = channels >= 3 ? c : 0;
        img[(c * H + y) * W + x] =
            float(buf[std::size_t((y * W + x) * channels + sc)]) / 255.0f;
      }
  return img;
}

// Fixed compression settings keep the emitted bytes reproducible for a given
// libpng/zlib build.
inline void save_png(const std::string& path, const Image& img) {
  const idx H = img.dim(1), W = img.dim(2);
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  CR_CHECK(fp, "cannot open for write: ", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(str("png write failed: ", path));
  }
  png_init_io(png, fp);
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, png_uint_32(W), png_uint_32(H), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> buf = image_to_u8(img);
  for (idx y = 0; y < H; ++y) png_write_row(png, buf.data() + y * W * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Image load_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  CR_CHECK(fp, "cannot open image: ", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    fail(str("png read failed: ", path));
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
      png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const idx H = idx(png_get_image_height(png, info));
  const idx W = idx(png_get_image_width(png, info));
  const int channels = int(png_get_channels(png, info));
  CR_CHECK(channels == 1 || channels == 3, "unsupported png channel count ", channels, ": ", path);
  std::vector<std::uint8_t> buf(std::size_t(H * W * channels));
  for (idx y = 0; y < H; ++y) png_read_row(png, buf.data() + y * W * channels, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return image_from_u8(buf.data(), H, W, channels);
}

inline Image crop_image(const Image& img, idx top, idx left, idx h, idx w) {
  const idx H = img.dim(1), W = img.dim(2);
  CR_CHECK(top + h <= H && left + w <= W, "crop out of range");
  Image out = make_image(h, w);
  for (idx c = 0; c < 3; ++c)
    for (idx y = 0; y < h; ++y)
      std::memcpy(out.data() + (c * h + y) * w, img.data() + (c * H + top + y) * W + left,
                  std::size_t(w) * sizeof(float));
  return out;
}

}  // namespace cdrest
