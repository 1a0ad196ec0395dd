#include "lsf/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "lsf/errors.hpp"

namespace lsf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Errors surface as DataError via setjmp; keep libpng off stderr.
void quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void quiet_warning(png_structp, png_const_charp) {}

}  // namespace

std::vector<uint8_t> quantize_rgb8(const Eigen::MatrixXd& img) {
  if (img.cols() != 3) throw InputError("image must have 3 color columns");
  std::vector<uint8_t> out(static_cast<size_t>(img.rows()) * 3);
  for (Eigen::Index i = 0; i < img.rows(); ++i)
    for (int c = 0; c < 3; ++c) {
      double v = img(i, c);
      if (!(v >= 0.0 && v <= 1.0))
        throw InputError("pixel values must lie in [0,1]");
      out[static_cast<size_t>(i) * 3 + c] =
          static_cast<uint8_t>(std::lround(v * 255.0));
    }
  return out;
}

void write_png(const std::string& path, const Eigen::MatrixXd& img, int width,
               int height) {
  if (width < 1 || height < 1 ||
      img.rows() != static_cast<Eigen::Index>(width) * height)
    throw InputError("image rows must equal width*height");
  auto bytes = quantize_rgb8(img);

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, quiet_error, quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, bytes.data() + static_cast<size_t>(y) * width * 3);
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

Eigen::MatrixXd read_png(const std::string& path, int& width, int& height) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, quiet_error, quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed for " + path);
  }
  std::vector<uint8_t> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt png: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3 || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png not reducible to 8-bit RGB: " + path);
  }
  bytes.resize(static_cast<size_t>(width) * height * 3);
  rows.resize(height);
  for (int y = 0; y < height; ++y)
    rows[y] = bytes.data() + static_cast<size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Eigen::MatrixXd img(static_cast<Eigen::Index>(width) * height, 3);
  for (Eigen::Index i = 0; i < img.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      img(i, c) = bytes[static_cast<size_t>(i) * 3 + c] / 255.0;
  return img;
}

}  // namespace lsf
