#include "coopir/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "coopir/error.hpp"

namespace coopir::degrade {

namespace {

constexpr double kRangeTol = 1e-12;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_in(double v, double lo, double hi, const char* what) {
  if (!std::isfinite(v) || v < lo - kRangeTol || v > hi + kRangeTol) {
    std::ostringstream ss;
    ss << what << " = " << v << " outside [" << lo << ", " << hi << "]";
    throw ParamError(ss.str());
  }
}

template <class T>
std::pair<T, T> min_max(const std::vector<T>& v, const char* what) {
  if (v.empty()) throw ConfigError(std::string(what) + ": empty choice list");
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

// Standard JPEG luminance quantization table (Annex K).
constexpr std::array<double, 64> kJpegLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
};

const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int k = 0; k < 8; ++k) {
      const double ck = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) b[k * 8 + n] = ck * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    }
    return b;
  }();
  return basis;
}

Image jpeg_compress(const Image& img, double quality) {
  const double scale = quality < 50.0 ? 50.0 / quality : (100.0 - quality) / 50.0;
  std::array<double, 64> q{};
  for (int i = 0; i < 64; ++i) q[i] = std::max(1.0, kJpegLuma[i] * scale);
  const auto& b = dct_basis();

  const int ph = (img.height + 7) / 8 * 8;
  const int pw = (img.width + 7) / 8 * 8;
  Image out = img;
  std::array<double, 64> block{}, tmp{}, coef{};
  for (int c = 0; c < img.channels; ++c) {
    for (int by = 0; by < ph; by += 8) {
      for (int bx = 0; bx < pw; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            const int sy = std::min(by + y, img.height - 1);
            const int sx = std::min(bx + x, img.width - 1);
            block[y * 8 + x] = img.at(sy, sx, c) * 255.0 - 128.0;
          }
        // Forward 2-D DCT: rows then columns.
        for (int y = 0; y < 8; ++y)
          for (int k = 0; k < 8; ++k) {
            double s = 0.0;
            for (int n = 0; n < 8; ++n) s += b[k * 8 + n] * block[y * 8 + n];
            tmp[y * 8 + k] = s;
          }
        for (int k = 0; k < 8; ++k)
          for (int x = 0; x < 8; ++x) {
            double s = 0.0;
            for (int n = 0; n < 8; ++n) s += b[k * 8 + n] * tmp[n * 8 + x];
            coef[k * 8 + x] = std::round(s / q[k * 8 + x]) * q[k * 8 + x];
          }
        // Inverse.
        for (int n = 0; n < 8; ++n)
          for (int x = 0; x < 8; ++x) {
            double s = 0.0;
            for (int k = 0; k < 8; ++k) s += b[k * 8 + n] * coef[k * 8 + x];
            tmp[n * 8 + x] = s;
          }
        for (int y = 0; y < 8; ++y)
          for (int n = 0; n < 8; ++n) {
            double s = 0.0;
            for (int k = 0; k < 8; ++k) s += b[k * 8 + n] * tmp[y * 8 + k];
            block[y * 8 + n] = s;
          }
        for (int y = 0; y < 8 && by + y < img.height; ++y)
          for (int x = 0; x < 8 && bx + x < img.width; ++x)
            out.at(by + y, bx + x, c) = (block[y * 8 + x] + 128.0) / 255.0;
      }
    }
  }
  return clamped(std::move(out));
}

Image low_resolution(const Image& img, int factor) {
  const int lh = (img.height + factor - 1) / factor;
  const int lw = (img.width + factor - 1) / factor;
  Image small(lh, lw, img.channels);
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double s = 0.0;
        int n = 0;
        for (int dy = 0; dy < factor && y * factor + dy < img.height; ++dy)
          for (int dx = 0; dx < factor && x * factor + dx < img.width; ++dx) {
            s += img.at(y * factor + dy, x * factor + dx, c);
            ++n;
          }
        small.at(y, x, c) = s / n;
      }
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y) {
    const double sy = std::clamp((y + 0.5) / factor - 0.5, 0.0, static_cast<double>(lh - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, lh - 1);
    const double fy = sy - y0;
    for (int x = 0; x < img.width; ++x) {
      const double sx = std::clamp((x + 0.5) / factor - 0.5, 0.0, static_cast<double>(lw - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, lw - 1);
      const double fx = sx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = small.at(y0, x0, c) * (1 - fx) + small.at(y0, x1, c) * fx;
        const double bot = small.at(y1, x0, c) * (1 - fx) + small.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return clamped(std::move(out));
}

Image add_rain(const Image& img, const RainParams& p, Prng& rng) {
  Plane mask(img.height, img.width);
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(theta);
  const double dy = std::sin(theta);
  for (int i = 0; i < p.count; ++i) {
    const double cx = rng.uniform(0.0, img.width);
    const double cy = rng.uniform(0.0, img.height);
    const double len = rng.uniform(p.min_length, p.max_length);
    for (double t = -0.5 * len; t <= 0.5 * len; t += 0.5) {
      const int x = static_cast<int>(std::floor(cx + t * dx));
      const int y = static_cast<int>(std::floor(cy + t * dy));
      if (x >= 0 && x < img.width && y >= 0 && y < img.height) mask.at(y, x) = p.intensity;
    }
  }
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) += mask.at(y, x);
  return clamped(std::move(out));
}

}  // namespace

DegradationKind kind_of(const DegradationParams& params) {
  return std::visit(Overloaded{
                        [](const NoiseParams&) { return DegradationKind::noise; },
                        [](const RainParams&) { return DegradationKind::rain; },
                        [](const HazeParams&) { return DegradationKind::haze; },
                        [](const DefocusParams&) { return DegradationKind::defocus_blur; },
                        [](const MotionParams&) { return DegradationKind::motion_blur; },
                        [](const LowResParams&) { return DegradationKind::low_resolution; },
                        [](const JpegParams&) { return DegradationKind::jpeg; },
                        [](const LowLightParams&) { return DegradationKind::low_light; },
                    },
                    params);
}

DegradationParams default_params(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::noise: return NoiseParams{};
    case DegradationKind::rain: return RainParams{};
    case DegradationKind::haze: return HazeParams{};
    case DegradationKind::defocus_blur: return DefocusParams{};
    case DegradationKind::motion_blur: return MotionParams{};
    case DegradationKind::low_resolution: return LowResParams{};
    case DegradationKind::jpeg: return JpegParams{};
    case DegradationKind::low_light: return LowLightParams{};
  }
  throw ParamError("unknown degradation kind");
}

void check_params(const DegradationParams& params, const DegradationRanges& r) {
  std::visit(Overloaded{
                 [&](const NoiseParams& p) {
                   auto [lo, hi] = min_max(r.noise_sigmas, "noise_sigmas");
                   require_in(p.sigma, lo, hi, "noise sigma");
                 },
                 [&](const RainParams& p) {
                   require_in(p.count, r.rain_count[0], r.rain_count[1], "rain count");
                   require_in(p.min_length, r.rain_length[0], r.rain_length[1], "rain min length");
                   require_in(p.max_length, p.min_length, r.rain_length[1], "rain max length");
                   require_in(p.angle_deg, r.rain_angle_deg[0], r.rain_angle_deg[1], "rain angle");
                   require_in(p.intensity, r.rain_intensity[0], r.rain_intensity[1], "rain intensity");
                 },
                 [&](const HazeParams& p) {
                   // t = 1 (no haze) and t = 0 (pure airlight) are the model's limits.
                   require_in(p.transmission, 0.0, 1.0, "haze transmission");
                   require_in(p.airlight, 0.0, 1.0, "haze airlight");
                 },
                 [&](const DefocusParams& p) {
                   require_in(p.radius, r.defocus_radius[0], r.defocus_radius[1], "defocus radius");
                 },
                 [&](const MotionParams& p) {
                   require_in(p.length, r.motion_length[0], r.motion_length[1], "motion length");
                   if (!(p.angle >= 0.0 && p.angle < std::numbers::pi)) {
                     throw ParamError("motion angle outside [0, pi)");
                   }
                 },
                 [&](const LowResParams& p) {
                   if (std::find(r.lowres_factors.begin(), r.lowres_factors.end(), p.factor) ==
                       r.lowres_factors.end()) {
                     throw ParamError("low_resolution factor " + std::to_string(p.factor) + " not allowed");
                   }
                 },
                 [&](const JpegParams& p) {
                   require_in(p.quality, r.jpeg_quality[0], r.jpeg_quality[1], "jpeg quality");
                 },
                 [&](const LowLightParams& p) {
                   require_in(p.gamma, r.lowlight_gamma[0], r.lowlight_gamma[1], "low_light gamma");
                   require_in(p.gain, r.lowlight_gain[0], r.lowlight_gain[1], "low_light gain");
                 },
             },
             params);
}

DegradationParams sample_params(DegradationKind kind, Prng& rng, const DegradationRanges& r) {
  switch (kind) {
    case DegradationKind::noise: {
      min_max(r.noise_sigmas, "noise_sigmas");
      const int i = rng.uniform_int(0, static_cast<int>(r.noise_sigmas.size()) - 1);
      return NoiseParams{r.noise_sigmas[i]};
    }
    case DegradationKind::rain: {
      RainParams p;
      p.count = rng.uniform_int(r.rain_count[0], r.rain_count[1]);
      p.min_length = r.rain_length[0];
      p.max_length = r.rain_length[1];
      p.angle_deg = rng.uniform(r.rain_angle_deg[0], r.rain_angle_deg[1]);
      p.intensity = rng.uniform(r.rain_intensity[0], r.rain_intensity[1]);
      return p;
    }
    case DegradationKind::haze:
      return HazeParams{rng.uniform(r.haze_transmission[0], r.haze_transmission[1]),
                        rng.uniform(r.haze_airlight[0], r.haze_airlight[1])};
    case DegradationKind::defocus_blur:
      return DefocusParams{rng.uniform(r.defocus_radius[0], r.defocus_radius[1])};
    case DegradationKind::motion_blur: {
      const double len = rng.uniform(r.motion_length[0], r.motion_length[1]);
      return MotionParams{len, rng.uniform(0.0, std::numbers::pi)};
    }
    case DegradationKind::low_resolution: {
      min_max(r.lowres_factors, "lowres_factors");
      const int i = rng.uniform_int(0, static_cast<int>(r.lowres_factors.size()) - 1);
      return LowResParams{r.lowres_factors[i]};
    }
    case DegradationKind::jpeg: return JpegParams{rng.uniform(r.jpeg_quality[0], r.jpeg_quality[1])};
    case DegradationKind::low_light:
      return LowLightParams{rng.uniform(r.lowlight_gamma[0], r.lowlight_gamma[1]),
                            rng.uniform(r.lowlight_gain[0], r.lowlight_gain[1])};
  }
  throw ParamError("unknown degradation kind");
}

Kernel disk_kernel(double radius) {
  const int half = static_cast<int>(std::ceil(radius));
  Kernel k{2 * half + 1, 2 * half + 1, {}};
  k.w.assign(static_cast<std::size_t>(k.rows) * k.cols, 0.0);
  constexpr int kSub = 4;
  double total = 0.0;
  for (int y = -half; y <= half; ++y)
    for (int x = -half; x <= half; ++x) {
      int inside = 0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double py = y - 0.5 + (sy + 0.5) / kSub;
          const double px = x - 0.5 + (sx + 0.5) / kSub;
          if (px * px + py * py <= radius * radius) ++inside;
        }
      const double w = static_cast<double>(inside) / (kSub * kSub);
      k.w[static_cast<std::size_t>(y + half) * k.cols + (x + half)] = w;
      total += w;
    }
  for (double& w : k.w) w /= total;
  return k;
}

Kernel motion_kernel(double length, double angle) {
  const int half = static_cast<int>(std::ceil(length / 2.0));
  Kernel k{2 * half + 1, 2 * half + 1, {}};
  k.w.assign(static_cast<std::size_t>(k.rows) * k.cols, 0.0);
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  const int steps = static_cast<int>(std::ceil(length * 10.0));
  for (int i = 0; i <= steps; ++i) {
    const double t = -0.5 * length + length * i / steps;
    const double px = half + t * dx;
    const double py = half + t * dy;
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0;
    const double fy = py - y0;
    const double ws[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int j = 0; j < 4; ++j) {
      if (xs[j] >= 0 && xs[j] < k.cols && ys[j] >= 0 && ys[j] < k.rows) {
        k.w[static_cast<std::size_t>(ys[j]) * k.cols + xs[j]] += ws[j];
      }
    }
  }
  double total = 0.0;
  for (double w : k.w) total += w;
  for (double& w : k.w) w /= total;
  return k;
}

Image convolve_replicate(const Image& img, const Kernel& k) {
  const int ry = k.rows / 2;
  const int rx = k.cols / 2;
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int i = 0; i < k.rows; ++i) {
          const int sy = std::clamp(y + i - ry, 0, img.height - 1);
          for (int j = 0; j < k.cols; ++j) {
            const int sx = std::clamp(x + j - rx, 0, img.width - 1);
            acc += k.w[static_cast<std::size_t>(i) * k.cols + j] * img.at(sy, sx, c);
          }
        }
        out.at(y, x, c) = acc;
      }
  return out;
}

Image apply_degradation(const Image& img, const DegradationParams& params, Prng& rng,
                        const DegradationRanges& ranges) {
  validate(img);
  check_params(params, ranges);
  return std::visit(
      Overloaded{
          [&](const NoiseParams& p) {
            Image out = img;
            for (double& v : out.data) v += p.sigma * rng.normal();
            return clamped(std::move(out));
          },
          [&](const RainParams& p) { return add_rain(img, p, rng); },
          [&](const HazeParams& p) {
            Image out = img;
            for (double& v : out.data) v = v * p.transmission + p.airlight * (1.0 - p.transmission);
            return clamped(std::move(out));
          },
          [&](const DefocusParams& p) { return clamped(convolve_replicate(img, disk_kernel(p.radius))); },
          [&](const MotionParams& p) { return clamped(convolve_replicate(img, motion_kernel(p.length, p.angle))); },
          [&](const LowResParams& p) { return low_resolution(img, p.factor); },
          [&](const JpegParams& p) { return jpeg_compress(img, p.quality); },
          [&](const LowLightParams& p) {
            Image out = img;
            for (double& v : out.data) v = p.gain * std::pow(v, p.gamma);
            return clamped(std::move(out));
          },
      },
      params);
}

Synthesized synthesize(const Image& clean, const DegradationSpec& spec, const DegradationRanges& ranges) {
  if (spec.steps.empty() || spec.steps.size() > 3) {
    throw ParamError("degradation spec must have 1 to 3 steps, got " + std::to_string(spec.steps.size()));
  }
  Synthesized out{clean, {}};
  for (const auto& step : spec.steps) {
    if (kind_of(step.params) != step.kind) throw ParamError("degradation step kind does not match its parameters");
    if (out.gt_set.contains(step.kind)) {
      throw ParamError("degradation kind repeated in spec: " + std::string(kind_name(step.kind)));
    }
    out.gt_set.insert(step.kind);
  }
  Prng rng(spec.seed);
  for (const auto& step : spec.steps) out.lq = apply_degradation(out.lq, step.params, rng, ranges);
  return out;
}

DegradationSpec make_spec(KindSet combo, std::uint64_t seed, const DegradationRanges& ranges) {
  DegradationSpec spec;
  spec.seed = seed;
  Prng param_rng(splitmix64(seed));
  for (auto kind : kApplicationOrder) {
    if (combo.contains(kind)) spec.steps.push_back({kind, sample_params(kind, param_rng, ranges)});
  }
  return spec;
}

std::vector<KindSet> ComboTable::all() const {
  std::vector<KindSet> out = singles;
  out.insert(out.end(), duals.begin(), duals.end());
  out.insert(out.end(), triples.begin(), triples.end());
  return out;
}

ComboTable full_table() {
  ComboTable t;
  for (int i = 0; i < kNumKinds; ++i) {
    t.singles.push_back(KindSet{kAllKinds[i]});
    for (int j = i + 1; j < kNumKinds; ++j) {
      t.duals.push_back(KindSet{kAllKinds[i], kAllKinds[j]});
      for (int k = j + 1; k < kNumKinds; ++k) t.triples.push_back(KindSet{kAllKinds[i], kAllKinds[j], kAllKinds[k]});
    }
  }
  return t;
}

ComboTable preset(std::string_view name) {
  using K = DegradationKind;
  ComboTable t;
  if (name == "all") return full_table();
  if (name == "empirical8") {
    t.duals = {{K::rain, K::noise},         {K::rain, K::haze},         {K::haze, K::noise},
               {K::rain, K::defocus_blur},  {K::haze, K::defocus_blur}, {K::defocus_blur, K::noise}};
    t.triples = {{K::rain, K::haze, K::noise}, {K::rain, K::haze, K::defocus_blur}};
  } else if (name == "groupA") {
    t.duals = {{K::rain, K::haze},           {K::motion_blur, K::low_resolution}, {K::low_light, K::noise},
               {K::defocus_blur, K::jpeg},   {K::noise, K::jpeg},                 {K::rain, K::low_resolution},
               {K::motion_blur, K::low_light}, {K::defocus_blur, K::haze}};
  } else if (name == "groupB") {
    t.duals = {{K::haze, K::noise},
               {K::defocus_blur, K::low_resolution},
               {K::motion_blur, K::jpeg},
               {K::rain, K::low_light}};
  } else if (name == "groupC") {
    t.triples = {{K::haze, K::motion_blur, K::low_resolution},
                 {K::rain, K::noise, K::low_resolution},
                 {K::low_light, K::defocus_blur, K::jpeg},
                 {K::motion_blur, K::defocus_blur, K::noise}};
  } else {
    throw ConfigError("unknown degradation preset '" + std::string(name) +
                      "' (valid: all, empirical8, groupA, groupB, groupC)");
  }
  t.weights = {t.singles.empty() ? 0.0 : 1.0, t.duals.empty() ? 0.0 : 3.0, t.triples.empty() ? 0.0 : 5.0};
  return t;
}

std::vector<std::string> preset_names() { return {"all", "empirical8", "groupA", "groupB", "groupC"}; }

KindSet sample_combo(const ComboTable& table, Prng& rng) {
  const std::vector<KindSet>* tiers[3] = {&table.singles, &table.duals, &table.triples};
  double total = 0.0;
  for (int t = 0; t < 3; ++t) {
    const double w = table.weights[t];
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("combo weights must be finite and non-negative");
    if (w > 0.0 && tiers[t]->empty()) {
      throw ConfigError("combo table tier " + std::to_string(t + 1) + " is empty but has nonzero weight");
    }
    total += w;
  }
  if (total <= 0.0) throw ConfigError("combo weights sum to zero");
  const double u = rng.uniform() * total;
  int tier = 0;
  double acc = 0.0;
  for (; tier < 3; ++tier) {
    acc += table.weights[tier];
    if (u < acc && table.weights[tier] > 0.0) break;
  }
  if (tier == 3) {
    tier = 2;
    while (table.weights[tier] <= 0.0) --tier;
  }
  const auto& list = *tiers[tier];
  return list[rng.uniform_int(0, static_cast<int>(list.size()) - 1)];
}

CleanKind clean_kind_from_name(std::string_view name) {
  if (name == "gradient") return CleanKind::gradient;
  if (name == "checker") return CleanKind::checker;
  if (name == "value_noise_texture") return CleanKind::value_noise_texture;
  if (name == "shapes") return CleanKind::shapes;
  throw ConfigError("unknown clean image kind '" + std::string(name) + "'");
}

std::string_view clean_kind_name(CleanKind kind) {
  switch (kind) {
    case CleanKind::gradient: return "gradient";
    case CleanKind::checker: return "checker";
    case CleanKind::value_noise_texture: return "value_noise_texture";
    case CleanKind::shapes: return "shapes";
  }
  return "?";
}

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

Plane value_noise(int size, Prng& rng) {
  Plane out(size, size);
  double amp = 1.0;
  double amp_total = 0.0;
  for (int cell = std::max(4, size / 4); cell >= 4 && amp > 0.1; cell /= 2, amp *= 0.5) {
    const int n = size / cell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(n) * n);
    for (double& v : lattice) v = rng.uniform();
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double gy = static_cast<double>(y) / cell;
        const double gx = static_cast<double>(x) / cell;
        const int y0 = static_cast<int>(gy);
        const int x0 = static_cast<int>(gx);
        const double fy = smoothstep(gy - y0);
        const double fx = smoothstep(gx - x0);
        const double a = lattice[y0 * n + x0], b = lattice[y0 * n + x0 + 1];
        const double c = lattice[(y0 + 1) * n + x0], d = lattice[(y0 + 1) * n + x0 + 1];
        out.at(y, x) += amp * ((a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy);
      }
    amp_total += amp;
  }
  for (double& v : out.v) v /= amp_total;
  return out;
}

}  // namespace

Image gen_clean(CleanKind kind, int size, Prng& rng) {
  if (size < 32) throw ParamError("gen_clean: size must be >= 32, got " + std::to_string(size));
  Image img(size, size, 3);
  switch (kind) {
    case CleanKind::checker:
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = ((y / 8 + x / 8) % 2 == 0) ? 0.2 : 0.8;
      break;
    case CleanKind::gradient: {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      double c0[3], c1[3];
      for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(0.1, 0.9);
        c1[c] = rng.uniform(0.1, 0.9);
      }
      const double ux = std::cos(angle), uy = std::sin(angle);
      const double span = (std::abs(ux) + std::abs(uy)) * (size - 1);
      const double offset = std::min(0.0, ux) * (size - 1) + std::min(0.0, uy) * (size - 1);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double t = (x * ux + y * uy - offset) / span;
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = c0[c] + (c1[c] - c0[c]) * t;
        }
      break;
    }
    case CleanKind::value_noise_texture:
      for (int c = 0; c < 3; ++c) {
        const Plane p = value_noise(size, rng);
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) img.at(y, x, c) = 0.1 + 0.8 * p.at(y, x);
      }
      break;
    case CleanKind::shapes: {
      const Plane bg = value_noise(size, rng);
      double base[3];
      for (double& b : base) b = rng.uniform(0.3, 0.7);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = base[c] + 0.2 * (bg.at(y, x) - 0.5);
      const int count = rng.uniform_int(6, 10);
      for (int s = 0; s < count; ++s) {
        const bool circle = rng.uniform() < 0.5;
        const double cx = rng.uniform(0.0, size), cy = rng.uniform(0.0, size);
        const double rad = rng.uniform(size / 16.0, size / 5.0);
        double col[3];
        for (double& v : col) v = rng.uniform(0.05, 0.95);
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const bool in = circle ? dx * dx + dy * dy <= rad * rad : std::abs(dx) <= rad && std::abs(dy) <= 0.6 * rad;
            if (in)
              for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
          }
      }
      break;
    }
  }
  return clamped(std::move(img));
}

std::string describe(const DegradationParams& params) {
  std::ostringstream ss;
  ss.precision(6);
  std::visit(Overloaded{
                 [&](const NoiseParams& p) { ss << "sigma=" << p.sigma; },
                 [&](const RainParams& p) {
                   ss << "count=" << p.count << " angle_deg=" << p.angle_deg << " intensity=" << p.intensity;
                 },
                 [&](const HazeParams& p) { ss << "t=" << p.transmission << " A=" << p.airlight; },
                 [&](const DefocusParams& p) { ss << "radius=" << p.radius; },
                 [&](const MotionParams& p) { ss << "length=" << p.length << " angle=" << p.angle; },
                 [&](const LowResParams& p) { ss << "factor=" << p.factor; },
                 [&](const JpegParams& p) { ss << "quality=" << p.quality; },
                 [&](const LowLightParams& p) { ss << "gamma=" << p.gamma << " gain=" << p.gain; },
             },
             params);
  return ss.str();
}

}  // namespace coopir::degrade
