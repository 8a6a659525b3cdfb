#include "coopir/serialize.hpp"

#include <string>

#include "coopir/error.hpp"

namespace coopir {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

template <class T>
void read_field(const Json& j, const char* key, T& out, int& used) {
  if (auto it = j.find(key); it != j.end()) {
    out = it->get<T>();
    ++used;
  }
}

}  // namespace

Json kindset_to_json(KindSet set) {
  Json arr = Json::array();
  for (auto k : set.kinds()) arr.push_back(std::string(kind_name(k)));
  return arr;
}

KindSet kindset_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("kind set must be a JSON array of kind names");
  KindSet set;
  for (const auto& v : j) {
    auto k = kind_from_name(v.get<std::string>());
    if (!k) throw FormatError("unknown degradation kind: " + v.get<std::string>());
    set.insert(*k);
  }
  return set;
}

Json params_to_json(const degrade::DegradationParams& params) {
  using namespace degrade;
  return std::visit(Overloaded{
                        [](const NoiseParams& p) { return Json{{"sigma", p.sigma}}; },
                        [](const RainParams& p) {
                          return Json{{"count", p.count},
                                      {"min_length", p.min_length},
                                      {"max_length", p.max_length},
                                      {"angle_deg", p.angle_deg},
                                      {"intensity", p.intensity}};
                        },
                        [](const HazeParams& p) {
                          return Json{{"transmission", p.transmission}, {"airlight", p.airlight}};
                        },
                        [](const DefocusParams& p) { return Json{{"radius", p.radius}}; },
                        [](const MotionParams& p) { return Json{{"length", p.length}, {"angle", p.angle}}; },
                        [](const LowResParams& p) { return Json{{"factor", p.factor}}; },
                        [](const JpegParams& p) { return Json{{"quality", p.quality}}; },
                        [](const LowLightParams& p) { return Json{{"gamma", p.gamma}, {"gain", p.gain}}; },
                    },
                    params);
}

degrade::DegradationParams params_from_json(DegradationKind kind, const Json& j) {
  using namespace degrade;
  if (!j.is_object()) throw FormatError("degradation params must be a JSON object");
  DegradationParams out = default_params(kind);
  int used = 0;
  try {
    std::visit(Overloaded{
                   [&](NoiseParams& p) { read_field(j, "sigma", p.sigma, used); },
                   [&](RainParams& p) {
                     read_field(j, "count", p.count, used);
                     read_field(j, "min_length", p.min_length, used);
                     read_field(j, "max_length", p.max_length, used);
                     read_field(j, "angle_deg", p.angle_deg, used);
                     read_field(j, "intensity", p.intensity, used);
                   },
                   [&](HazeParams& p) {
                     read_field(j, "transmission", p.transmission, used);
                     read_field(j, "airlight", p.airlight, used);
                   },
                   [&](DefocusParams& p) { read_field(j, "radius", p.radius, used); },
                   [&](MotionParams& p) {
                     read_field(j, "length", p.length, used);
                     read_field(j, "angle", p.angle, used);
                   },
                   [&](LowResParams& p) { read_field(j, "factor", p.factor, used); },
                   [&](JpegParams& p) { read_field(j, "quality", p.quality, used); },
                   [&](LowLightParams& p) {
                     read_field(j, "gamma", p.gamma, used);
                     read_field(j, "gain", p.gain, used);
                   },
               },
               out);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad degradation params: ") + e.what());
  }
  if (used != static_cast<int>(j.size()))
    throw FormatError("unknown field in " + std::string(kind_name(kind)) + " params: " + j.dump());
  return out;
}

Json spec_to_json(const degrade::DegradationSpec& spec) {
  Json steps = Json::array();
  for (const auto& s : spec.steps)
    steps.push_back(Json{{"kind", std::string(kind_name(s.kind))}, {"params", params_to_json(s.params)}});
  return Json{{"seed", spec.seed}, {"steps", steps}};
}

degrade::DegradationSpec spec_from_json(const Json& j) {
  degrade::DegradationSpec spec;
  try {
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("steps")) {
      const auto name = s.at("kind").get<std::string>();
      auto k = kind_from_name(name);
      if (!k) throw FormatError("unknown degradation kind: " + name);
      spec.steps.push_back({*k, params_from_json(*k, s.value("params", Json::object()))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad degradation spec: ") + e.what());
  }
  return spec;
}

Json ranges_to_json(const degrade::DegradationRanges& r) {
  return Json{{"noise_sigmas", r.noise_sigmas},
              {"motion_length", r.motion_length},
              {"defocus_radius", r.defocus_radius},
              {"rain_count", r.rain_count},
              {"rain_length", r.rain_length},
              {"rain_angle_deg", r.rain_angle_deg},
              {"rain_intensity", r.rain_intensity},
              {"haze_transmission", r.haze_transmission},
              {"haze_airlight", r.haze_airlight},
              {"jpeg_quality", r.jpeg_quality},
              {"lowres_factors", r.lowres_factors},
              {"lowlight_gamma", r.lowlight_gamma},
              {"lowlight_gain", r.lowlight_gain}};
}

degrade::DegradationRanges ranges_from_json(const Json& j, degrade::DegradationRanges r) {
  if (!j.is_object()) throw ConfigError("degradation ranges must be a JSON object");
  int used = 0;
  try {
    read_field(j, "noise_sigmas", r.noise_sigmas, used);
    read_field(j, "motion_length", r.motion_length, used);
    read_field(j, "defocus_radius", r.defocus_radius, used);
    read_field(j, "rain_count", r.rain_count, used);
    read_field(j, "rain_length", r.rain_length, used);
    read_field(j, "rain_angle_deg", r.rain_angle_deg, used);
    read_field(j, "rain_intensity", r.rain_intensity, used);
    read_field(j, "haze_transmission", r.haze_transmission, used);
    read_field(j, "haze_airlight", r.haze_airlight, used);
    read_field(j, "jpeg_quality", r.jpeg_quality, used);
    read_field(j, "lowres_factors", r.lowres_factors, used);
    read_field(j, "lowlight_gamma", r.lowlight_gamma, used);
    read_field(j, "lowlight_gain", r.lowlight_gain, used);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad degradation ranges: ") + e.what());
  }
  if (used != static_cast<int>(j.size())) {
    std::string valid;
    const Json defaults = ranges_to_json({});
    for (const auto& [k, v] : defaults.items()) valid += (valid.empty() ? "" : ", ") + k;
    throw ConfigError("unknown key in degradation ranges; valid keys: " + valid);
  }
  return r;
}

}  // namespace coopir
