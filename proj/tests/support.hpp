#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "coopir/degrade.hpp"
#include "coopir/image.hpp"
#include "coopir/prng.hpp"

namespace testing {

inline coopir::Image texture(int size = 32, std::uint64_t seed = 11) {
  coopir::Prng rng(seed);
  const int gen = size < 32 ? 32 : size;
  coopir::Image full = coopir::degrade::gen_clean(coopir::degrade::CleanKind::value_noise_texture, gen, rng);
  if (gen == size) return full;
  coopir::Image out(size, size, full.channels);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < full.channels; ++c) out.at(y, x, c) = full.at(y, x, c);
  return out;
}

inline coopir::Image constant(int h, int w, double v, int c = 3) { return coopir::Image(h, w, c, v); }

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("coopir_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double l1_distance(const coopir::Image& a, const coopir::Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace testing
