#include "textcanvas/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "textcanvas/errors.hpp"

namespace textcanvas::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(double v) {
  const long b = std::lround((v + 1.0) * 0.5 * 255.0);
  return static_cast<unsigned char>(std::clamp(b, 0L, 255L));
}

double from_byte(unsigned char b) {
  return static_cast<double>(b) / 255.0 * 2.0 - 1.0;
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
  if (image.channels() != 3)
    throw ShapeMismatch("write_png: expected a 3-channel image");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw CorruptFile("cannot open for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw CorruptFile("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw CorruptFile("libpng write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.w, image.h, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(image.w) * 3);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      const Index p = static_cast<Index>(y) * image.w + x;
      row[3 * x + 0] = to_byte(image.chw(0, p));
      row[3 * x + 1] = to_byte(image.chw(1, p));
      row[3 * x + 2] = to_byte(image.chw(2, p));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw MissingImage("cannot open image: " + path);

  unsigned char header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw CorruptFile("not a PNG file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptFile("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptFile("libpng read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);  // palette/gray/low-depth -> 8-bit
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptFile("unexpected channel count in " + path);
  }

  Image im = Image::zero(h, w);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      const Index p = static_cast<Index>(y) * w + x;
      im.chw(0, p) = from_byte(row[3 * x + 0]);
      im.chw(1, p) = from_byte(row[3 * x + 1]);
      im.chw(2, p) = from_byte(row[3 * x + 2]);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return im;
}

Image resize_bilinear(const Image& image, int out_h, int out_w) {
  if (image.h == out_h && image.w == out_w) return image;
  Image out = Image::zero(out_h, out_w, image.channels());
  const double sy = static_cast<double>(image.h) / out_h;
  const double sx = static_cast<double>(image.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::min((y + 0.5) * sy - 0.5,
                               static_cast<double>(image.h - 1));
    const int y0 = std::max(0, static_cast<int>(std::floor(fy)));
    const int y1 = std::min(image.h - 1, y0 + 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::min((x + 0.5) * sx - 0.5,
                                 static_cast<double>(image.w - 1));
      const int x0 = std::max(0, static_cast<int>(std::floor(fx)));
      const int x1 = std::min(image.w - 1, x0 + 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < image.channels(); ++c) {
        const double top = (1 - wx) * image.chw(c, static_cast<Index>(y0) * image.w + x0) +
                           wx * image.chw(c, static_cast<Index>(y0) * image.w + x1);
        const double bot = (1 - wx) * image.chw(c, static_cast<Index>(y1) * image.w + x0) +
                           wx * image.chw(c, static_cast<Index>(y1) * image.w + x1);
        out.chw(c, static_cast<Index>(y) * out_w + x) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace textcanvas::io
