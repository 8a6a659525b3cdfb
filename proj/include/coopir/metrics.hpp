#pragma once

#include "coopir/image.hpp"

namespace coopir {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kGsimC = 1e-4;
inline constexpr double kSharpHalf = 0.05;
inline constexpr double kBalanceNoiseGain = 20.0;
inline constexpr double kBalanceContrastHalf = 0.05;

struct MetricVector {
  double psnr = 0.0;
  double ssim = 0.0;
  double gsim = 0.0;
  double nr_sharp = 0.0;
  double nr_balance = 0.0;

  static constexpr int kCount = 5;
  double operator[](int i) const;
};

struct NoReference {
  double sharp = 0.0;
  double balance = 0.0;
};

// Full-reference metrics on the BT.601 Y channel. All throw ShapeError on a
// dimension mismatch.
double psnr(const Image& pred, const Image& gt);
double ssim(const Image& pred, const Image& gt);
double gsim(const Image& pred, const Image& gt);

NoReference nr_metrics(const Image& img);

MetricVector evaluate_metrics(const Image& pred, const Image& gt);

// Building blocks shared with the feature extractor and tests.
Plane sobel_magnitude(const Plane& y);
Plane median3(const Plane& y);
Plane gaussian_blur(const Plane& p, double sigma, int radius);

}  // namespace coopir
