#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "coopir/metrics.hpp"
#include "coopir/plansearch.hpp"

namespace testing {

// Rank of plan i on metric m: one plus the number of plans with a strictly
// higher value or an equal value at a lower index.
inline std::vector<coopir::search::Ranks> oracle_ranks(const std::vector<coopir::MetricVector>& evals) {
  std::vector<coopir::search::Ranks> out(evals.size());
  for (std::size_t i = 0; i < evals.size(); ++i)
    for (int m = 0; m < coopir::MetricVector::kCount; ++m) {
      int r = 1;
      for (std::size_t j = 0; j < evals.size(); ++j)
        if (evals[j][m] > evals[i][m] || (evals[j][m] == evals[i][m] && j < i)) ++r;
      out[i][m] = r;
    }
  return out;
}

// Top-ceil(N/10) membership on at least three metrics, at least one of them
// full-reference (0..2) and one no-reference (3..4). Integer arithmetic only.
inline std::vector<std::size_t> oracle_selection(const std::vector<coopir::search::Ranks>& ranks) {
  const int cutoff = std::max<int>(1, static_cast<int>((ranks.size() + 9) / 10));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    int fr = 0, nr = 0;
    for (int m = 0; m < 3; ++m) fr += ranks[i][m] <= cutoff;
    for (int m = 3; m < 5; ++m) nr += ranks[i][m] <= cutoff;
    if (fr + nr >= 3 && fr >= 1 && nr >= 1) out.push_back(i);
  }
  return out;
}

inline coopir::MetricVector metrics_of(double p, double s, double g, double sh, double b) {
  coopir::MetricVector m;
  m.psnr = p;
  m.ssim = s;
  m.gsim = g;
  m.nr_sharp = sh;
  m.nr_balance = b;
  return m;
}

// Twenty plans (four study tools, length <= 2). Every metric defaults to
// 0.1 + 0.001*i, so untouched plans rank by descending index; a handful of
// plans get hand-placed top values.
//   psnr: 9 > 13    ssim: 9 > 5    gsim: 13 > 5    nr_sharp: 9 > 4    nr_balance: 13 > 5
inline std::vector<coopir::MetricVector> finding_fixture() {
  std::vector<coopir::MetricVector> v;
  for (int i = 0; i < 20; ++i) {
    const double b = 0.1 + 0.001 * i;
    v.push_back(metrics_of(b, b, b, b, b));
  }
  v[9].psnr = 0.9;
  v[13].psnr = 0.8;
  v[9].ssim = 0.9;
  v[5].ssim = 0.8;
  v[13].gsim = 0.9;
  v[5].gsim = 0.8;
  v[9].nr_sharp = 0.9;
  v[4].nr_sharp = 0.8;
  v[13].nr_balance = 0.9;
  v[5].nr_balance = 0.8;
  return v;
}

}  // namespace testing
