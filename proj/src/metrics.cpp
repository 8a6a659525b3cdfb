#include "coopir/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "coopir/error.hpp"

namespace coopir {

namespace {

constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;
constexpr double kSsimSigma = 1.5;
constexpr int kSsimRadius = 5;  // 11x11 window

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

double MetricVector::operator[](int i) const {
  switch (i) {
    case 0: return psnr;
    case 1: return ssim;
    case 2: return gsim;
    case 3: return nr_sharp;
    case 4: return nr_balance;
    default: throw ShapeError("MetricVector index out of range");
  }
}

Plane gaussian_blur(const Plane& p, double sigma, int radius) {
  std::vector<double> w(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += w[i + radius];
  }
  for (double& x : w) x /= total;

  Plane tmp(p.height, p.width);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += w[i + radius] * p.clamped_at(y, x + i);
      tmp.at(y, x) = acc;
    }
  }
  Plane out(p.height, p.width);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += w[i + radius] * tmp.clamped_at(y + i, x);
      out.at(y, x) = acc;
    }
  }
  return out;
}

Plane sobel_magnitude(const Plane& p) {
  Plane out(p.height, p.width);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      const double gx = (p.clamped_at(y - 1, x + 1) + 2.0 * p.clamped_at(y, x + 1) + p.clamped_at(y + 1, x + 1)) -
                        (p.clamped_at(y - 1, x - 1) + 2.0 * p.clamped_at(y, x - 1) + p.clamped_at(y + 1, x - 1));
      const double gy = (p.clamped_at(y + 1, x - 1) + 2.0 * p.clamped_at(y + 1, x) + p.clamped_at(y + 1, x + 1)) -
                        (p.clamped_at(y - 1, x - 1) + 2.0 * p.clamped_at(y - 1, x) + p.clamped_at(y - 1, x + 1));
      out.at(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

Plane median3(const Plane& p) {
  Plane out(p.height, p.width);
  std::array<double, 9> win{};
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      int k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) win[k++] = p.clamped_at(y + dy, x + dx);
      std::nth_element(win.begin(), win.begin() + 4, win.end());
      out.at(y, x) = win[4];
    }
  }
  return out;
}

double psnr(const Image& pred, const Image& gt) {
  require_same_shape(pred, gt, "psnr");
  const Plane a = luma(pred);
  const Plane b = luma(gt);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.v.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& pred, const Image& gt) {
  require_same_shape(pred, gt, "ssim");
  const Plane a = luma(pred);
  const Plane b = luma(gt);
  const std::size_t n = a.v.size();
  Plane aa(a.height, a.width), bb(a.height, a.width), ab(a.height, a.width);
  for (std::size_t i = 0; i < n; ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  const Plane mu_a = gaussian_blur(a, kSsimSigma, kSsimRadius);
  const Plane mu_b = gaussian_blur(b, kSsimSigma, kSsimRadius);
  const Plane e_aa = gaussian_blur(aa, kSsimSigma, kSsimRadius);
  const Plane e_bb = gaussian_blur(bb, kSsimSigma, kSsimRadius);
  const Plane e_ab = gaussian_blur(ab, kSsimSigma, kSsimRadius);

  const double c1 = kSsimK1 * kSsimK1;
  const double c2 = kSsimK2 * kSsimK2;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i];
    const double mb = mu_b.v[i];
    const double va = e_aa.v[i] - ma * ma;
    const double vb = e_bb.v[i] - mb * mb;
    const double cov = e_ab.v[i] - ma * mb;
    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return std::clamp(acc / static_cast<double>(n), -1.0, 1.0);
}

double gsim(const Image& pred, const Image& gt) {
  require_same_shape(pred, gt, "gsim");
  const Plane ga = sobel_magnitude(luma(pred));
  const Plane gb = sobel_magnitude(luma(gt));
  double acc = 0.0;
  for (std::size_t i = 0; i < ga.v.size(); ++i) {
    const double p = ga.v[i];
    const double g = gb.v[i];
    acc += (2.0 * p * g + kGsimC) / (p * p + g * g + kGsimC);
  }
  return acc / static_cast<double>(ga.v.size());
}

NoReference nr_metrics(const Image& img) {
  const Plane y = luma(img);
  const double s = mean_of(sobel_magnitude(y).v);

  const Plane med = median3(y);
  double nu = 0.0;
  for (std::size_t i = 0; i < y.v.size(); ++i) nu += std::abs(y.v[i] - med.v[i]);
  nu /= static_cast<double>(y.v.size());

  // Moments about the first pixel so a constant image has exactly zero spread.
  const double ref = y.v.front();
  double s1 = 0.0, s2 = 0.0;
  for (double v : y.v) {
    s1 += v - ref;
    s2 += (v - ref) * (v - ref);
  }
  const double n = static_cast<double>(y.v.size());
  const double sigma = std::sqrt(std::max(0.0, s2 / n - (s1 / n) * (s1 / n)));

  NoReference out;
  out.sharp = s / (s + kSharpHalf);
  out.balance = (1.0 / (1.0 + kBalanceNoiseGain * nu)) * (sigma / (sigma + kBalanceContrastHalf));
  return out;
}

MetricVector evaluate_metrics(const Image& pred, const Image& gt) {
  MetricVector m;
  m.psnr = psnr(pred, gt);
  m.ssim = ssim(pred, gt);
  m.gsim = gsim(pred, gt);
  const NoReference nr = nr_metrics(pred);
  m.nr_sharp = nr.sharp;
  m.nr_balance = nr.balance;
  return m;
}

}  // namespace coopir
