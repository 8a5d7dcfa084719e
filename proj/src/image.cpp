#include "tamperseg/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "tamperseg/common.hpp"

namespace tamperseg {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

size_t Mask::popcount() const {
  size_t n = 0;
  for (uint8_t v : data) n += (v != 0);
  return n;
}

ImageF to_unit(const ImageU8& img) {
  ImageF out(img.height, img.width, img.channels);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0;
  return out;
}

ImageU8 quantize(const ImageF& img) {
  ImageU8 out(img.height, img.width, img.channels);
  for (size_t i = 0; i < img.data.size(); ++i) {
    double v = img.data[i];
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    out.data[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Mask changed_pixels(const ImageU8& a, const ImageU8& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw std::invalid_argument("changed_pixels: shape mismatch");
  }
  Mask m(a.height, a.width);
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      for (int c = 0; c < a.channels; ++c) {
        int d = std::abs(int(a.at(y, x, c)) - int(b.at(y, x, c)));
        if (d > 1) {  // strictly more than 1/255
          m.at(y, x) = 1;
          break;
        }
      }
    }
  }
  return m;
}

Mask dilate3x3(const Mask& m) {
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      uint8_t v = 0;
      for (int dy = -1; dy <= 1 && !v; ++dy) {
        for (int dx = -1; dx <= 1 && !v; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < m.height && xx >= 0 && xx < m.width) v = m.at(yy, xx);
        }
      }
      out.at(y, x) = v;
    }
  }
  return out;
}

Mask erode3x3(const Mask& m) {
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      uint8_t v = 1;
      for (int dy = -1; dy <= 1 && v; ++dy) {
        for (int dx = -1; dx <= 1 && v; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < m.height && xx >= 0 && xx < m.width) v = m.at(yy, xx);
          // out-of-bounds neighbors count as set
        }
      }
      out.at(y, x) = v;
    }
  }
  return out;
}

Mask close3x3(const Mask& m) { return erode3x3(dilate3x3(m)); }

namespace {

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  }
  PngWriteCloser s;
  s.fp = std::fopen(path.c_str(), "wb");
  if (!s.fp) throw io_error("write_png: cannot open " + path);
  s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw io_error("write_png: png_create_write_struct failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw io_error("write_png: png_create_info_struct failed");
  if (setjmp(png_jmpbuf(s.png))) throw io_error("write_png: libpng error for " + path);

  png_init_io(s.png, s.fp);
  int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(s.png, s.info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(s.png, s.info);

  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) {
    rows[y] = const_cast<png_bytep>(img.data.data() + static_cast<size_t>(y) * img.width * img.channels);
  }
  png_write_image(s.png, rows.data());
  png_write_end(s.png, nullptr);
}

ImageU8 read_png(const std::string& path) {
  PngReadCloser s;
  s.fp = std::fopen(path.c_str(), "rb");
  if (!s.fp) throw io_error("read_png: cannot open " + path);
  s.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw io_error("read_png: png_create_read_struct failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw io_error("read_png: png_create_info_struct failed");
  if (setjmp(png_jmpbuf(s.png))) throw io_error("read_png: libpng error for " + path);

  png_init_io(s.png, s.fp);
  png_read_info(s.png, s.info);

  png_uint_32 w = png_get_image_width(s.png, s.info);
  png_uint_32 h = png_get_image_height(s.png, s.info);
  int depth = png_get_bit_depth(s.png, s.info);
  int color = png_get_color_type(s.png, s.info);

  if (depth == 16) png_set_strip_16(s.png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(s.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(s.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(s.png);
  png_read_update_info(s.png, s.info);

  int channels = png_get_channels(s.png, s.info);
  if (channels != 1 && channels != 3) throw io_error("read_png: unsupported channel count");

  ImageU8 img(static_cast<int>(h), static_cast<int>(w), channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) {
    rows[y] = img.data.data() + static_cast<size_t>(y) * w * channels;
  }
  png_read_image(s.png, rows.data());
  return img;
}

void write_mask_png(const std::string& path, const Mask& m) {
  ImageU8 img(m.height, m.width, 1);
  for (size_t i = 0; i < m.data.size(); ++i) img.data[i] = m.data[i] ? 255 : 0;
  write_png(path, img);
}

Mask read_mask_png(const std::string& path) {
  ImageU8 img = read_png(path);
  if (img.channels != 1) throw io_error("read_mask_png: expected grayscale " + path);
  Mask m(img.height, img.width);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = img.data[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace tamperseg
