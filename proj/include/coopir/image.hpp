#pragma once

#include <cstddef>
#include <vector>

namespace coopir {

inline constexpr int kMinImageSide = 8;

// H x W x C grid of doubles in [0,1], row-major, channel-interleaved.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }

  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
};

// Throws ShapeError / FormatError when the Image invariants do not hold.
void validate(const Image& img);

void require_same_shape(const Image& a, const Image& b, const char* what);

// Clamps every element into [0,1]; non-finite values become 0.
Image clamped(Image img);

// Single-channel plane used for luminance computations.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0) : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
  // Edge-replicated read.
  double clamped_at(int y, int x) const;
};

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

// BT.601 luma; a single-channel image is returned as-is.
Plane luma(const Image& img);

}  // namespace coopir
