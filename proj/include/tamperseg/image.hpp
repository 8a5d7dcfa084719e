#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tamperseg {

// 8-bit image, row-major, channels interleaved. channels is 1 or 3.
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int h, int w, int c, uint8_t fill = 0)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  uint8_t& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
};

// Binary mask, one byte per pixel, values in {0, 1}.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;

  Mask() = default;
  Mask(int h, int w, uint8_t fill = 0)
      : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

  uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t popcount() const;
};

// Unit-interval float image used by the models; converted from ImageU8 by /255.
struct ImageF {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  ImageF() = default;
  ImageF(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

ImageF to_unit(const ImageU8& img);
ImageU8 quantize(const ImageF& img);  // clamp to [0,1], round to 8-bit

// Pixels whose byte value differs by more than one 8-bit level in any channel.
Mask changed_pixels(const ImageU8& a, const ImageU8& b);

// 3x3 binary morphology. Dilation pads with 0, erosion pads with 1, so
// close(m) is always a superset of m.
Mask dilate3x3(const Mask& m);
Mask erode3x3(const Mask& m);
Mask close3x3(const Mask& m);

// PNG I/O (8-bit RGB for channels==3, 8-bit grayscale for channels==1).
void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// Masks persist as grayscale PNG with values {0, 255}.
void write_mask_png(const std::string& path, const Mask& m);
Mask read_mask_png(const std::string& path);

}  // namespace tamperseg
