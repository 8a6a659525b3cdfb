#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "coopir/image.hpp"
#include "coopir/kinds.hpp"
#include "coopir/prng.hpp"

namespace coopir::degrade {

struct NoiseParams {
  double sigma = 25.0 / 255.0;
};
struct RainParams {
  int count = 80;
  double min_length = 8.0;
  double max_length = 24.0;
  double angle_deg = 90.0;
  double intensity = 0.25;
};
struct HazeParams {
  double transmission = 0.6;
  double airlight = 0.9;
};
struct DefocusParams {
  double radius = 3.0;
};
struct MotionParams {
  double length = 9.0;
  double angle = 0.785398163397448;  // radians in [0, pi)
};
struct LowResParams {
  int factor = 2;
};
struct JpegParams {
  double quality = 20.0;
};
struct LowLightParams {
  double gamma = 2.0;
  double gain = 0.7;
};

using DegradationParams = std::variant<NoiseParams, RainParams, HazeParams, DefocusParams, MotionParams,
                                       LowResParams, JpegParams, LowLightParams>;

DegradationKind kind_of(const DegradationParams& params);
DegradationParams default_params(DegradationKind kind);

// Sampling ranges for every parameter. Defaults are the declared desk ranges;
// the harness lets configs override them.
struct DegradationRanges {
  std::vector<double> noise_sigmas = {15.0 / 255.0, 25.0 / 255.0, 50.0 / 255.0};
  std::array<double, 2> motion_length = {5.0, 15.0};
  std::array<double, 2> defocus_radius = {2.0, 5.0};
  std::array<int, 2> rain_count = {40, 120};
  std::array<double, 2> rain_length = {8.0, 24.0};
  std::array<double, 2> rain_angle_deg = {70.0, 110.0};
  std::array<double, 2> rain_intensity = {0.15, 0.4};
  std::array<double, 2> haze_transmission = {0.4, 0.8};
  std::array<double, 2> haze_airlight = {0.8, 1.0};
  std::array<double, 2> jpeg_quality = {10.0, 50.0};
  std::vector<int> lowres_factors = {2, 4};
  std::array<double, 2> lowlight_gamma = {1.5, 2.5};
  std::array<double, 2> lowlight_gain = {0.5, 0.9};
};

// Throws ParamError when a parameter record lies outside the declared ranges.
void check_params(const DegradationParams& params, const DegradationRanges& ranges = {});
DegradationParams sample_params(DegradationKind kind, Prng& rng, const DegradationRanges& ranges = {});

Image apply_degradation(const Image& img, const DegradationParams& params, Prng& rng,
                        const DegradationRanges& ranges = {});

struct DegradationStep {
  DegradationKind kind;
  DegradationParams params;
};

struct DegradationSpec {
  std::vector<DegradationStep> steps;
  std::uint64_t seed = 0;
};

struct Synthesized {
  Image lq;
  KindSet gt_set;
};

Synthesized synthesize(const Image& clean, const DegradationSpec& spec, const DegradationRanges& ranges = {});

// Order in which the kinds of a combination are applied when a spec is built
// from a kind-set.
inline constexpr std::array<DegradationKind, kNumKinds> kApplicationOrder = {
    DegradationKind::defocus_blur, DegradationKind::motion_blur, DegradationKind::haze,
    DegradationKind::rain,         DegradationKind::low_light,   DegradationKind::low_resolution,
    DegradationKind::noise,        DegradationKind::jpeg,
};

DegradationSpec make_spec(KindSet combo, std::uint64_t seed, const DegradationRanges& ranges = {});

struct ComboTable {
  std::vector<KindSet> singles;
  std::vector<KindSet> duals;
  std::vector<KindSet> triples;
  std::array<double, 3> weights = {1.0, 3.0, 5.0};

  // Entries in table order: singles, duals, triples.
  std::vector<KindSet> all() const;
};

// Every 1-, 2- and 3-subset of the eight kinds with weights (1,3,5).
ComboTable full_table();
ComboTable preset(std::string_view name);
std::vector<std::string> preset_names();

KindSet sample_combo(const ComboTable& table, Prng& rng);

enum class CleanKind { gradient, checker, value_noise_texture, shapes };
CleanKind clean_kind_from_name(std::string_view name);
std::string_view clean_kind_name(CleanKind kind);
Image gen_clean(CleanKind kind, int size, Prng& rng);

// Kernels used by the blur degradations; exposed for tests.
struct Kernel {
  int rows = 0;
  int cols = 0;
  std::vector<double> w;
};
Kernel disk_kernel(double radius);
Kernel motion_kernel(double length, double angle);
Image convolve_replicate(const Image& img, const Kernel& k);

std::string describe(const DegradationParams& params);

}  // namespace coopir::degrade
