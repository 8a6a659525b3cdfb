#include "coopir/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coopir/error.hpp"

namespace coopir {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c),
      data(static_cast<std::size_t>(std::max(h, 0)) * std::max(w, 0) * std::max(c, 0), fill) {}

void validate(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ShapeError("image must have 1 or 3 channels, got " + std::to_string(img.channels));
  }
  if (img.height < kMinImageSide || img.width < kMinImageSide) {
    throw ShapeError("image must be at least 8x8, got " + std::to_string(img.height) + "x" +
                     std::to_string(img.width));
  }
  if (img.data.size() != static_cast<std::size_t>(img.height) * img.width * img.channels) {
    throw ShapeError("image buffer size does not match its dimensions");
  }
  for (double v : img.data) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw FormatError("image value outside [0,1]: " + std::to_string(v));
    }
  }
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                     std::to_string(b.channels) + ")");
  }
}

Image clamped(Image img) {
  for (double& v : img.data) {
    v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  }
  return img;
}

double Plane::clamped_at(int y, int x) const {
  y = std::clamp(y, 0, height - 1);
  x = std::clamp(x, 0, width - 1);
  return v[static_cast<std::size_t>(y) * width + x];
}

Plane luma(const Image& img) {
  Plane p(img.height, img.width);
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  if (img.channels == 1) {
    std::copy(img.data.begin(), img.data.end(), p.v.begin());
    return p;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* px = &img.data[i * 3];
    p.v[i] = kLumaR * px[0] + kLumaG * px[1] + kLumaB * px[2];
  }
  return p;
}

}  // namespace coopir
