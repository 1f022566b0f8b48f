/* Copyright 2026 The Handpress Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <png.h>

#include <cstdio>
#include <memory>

#include "handpress/synthio.hpp"

namespace handpress {

namespace {
struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
}  // namespace

void write_png(const std::string& path, const ImageU8& image) {
  const int c = image.channels();
  int color_type;
  switch (c) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGBA; break;
    default: throw std::invalid_argument("write_png: unsupported channel count");
  }
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("write_png: libpng failure for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(image.height());
  for (int y = 0; y < image.height(); ++y)
    rows[y] = const_cast<png_bytep>(image.data() + static_cast<size_t>(y) * image.width() * c);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 read_png(const std::string& path) {
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("read_png: cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw DataError("read_png: not a PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("read_png: libpng failure for " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_read_update_info(png, info);
  const int w = png_get_image_width(png, info);
  const int h = png_get_image_height(png, info);
  const int c = png_get_channels(png, info);
  ImageU8 image(w, h, c);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = image.data() + static_cast<size_t>(y) * w * c;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

ImageU8 pressure_preview(const ImageF& grid, double max_pa) {
  // black -> blue -> red -> yellow, a fixed documented palette
  ImageU8 out(grid.width(), grid.height(), 3, 0);
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      const double t = std::clamp(grid.at(x, y) / max_pa, 0.0, 1.0);
      double r, g, b;
      if (t < 1.0 / 3) {
        const double u = 3 * t;
        r = 0; g = 0; b = u;
      } else if (t < 2.0 / 3) {
        const double u = 3 * t - 1;
        r = u; g = 0; b = 1 - u;
      } else {
        const double u = 3 * t - 2;
        r = 1; g = u; b = 0;
      }
      out.at(x, y, 0) = static_cast<uint8_t>(std::lround(255 * r));
      out.at(x, y, 1) = static_cast<uint8_t>(std::lround(255 * g));
      out.at(x, y, 2) = static_cast<uint8_t>(std::lround(255 * b));
    }
  }
  return out;
}

}  // namespace handpress
