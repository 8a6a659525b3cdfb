#include <cmath>
#include <set>
#include <string>

#include "coopir/degrade.hpp"
#include "coopir/error.hpp"
#include "coopir/io.hpp"
#include "coopir/metrics.hpp"
#include "coopir/tools.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coopir;
using namespace coopir::tools;
using K = DegradationKind;

namespace {

degrade::DegradationParams matched_degradation(K kind) {
  switch (kind) {
    case K::noise: return degrade::NoiseParams{50.0 / 255.0};
    case K::rain: return degrade::RainParams{100, 10.0, 20.0, 90.0, 0.35};
    case K::haze: return degrade::HazeParams{0.6, 0.9};
    case K::defocus_blur: return degrade::DefocusParams{2.5};
    case K::motion_blur: return degrade::MotionParams{9.0, 0.0};
    case K::low_resolution: return degrade::LowResParams{2};
    case K::jpeg: return degrade::JpegParams{15.0};
    case K::low_light: return degrade::LowLightParams{2.0, 0.6};
  }
  return degrade::NoiseParams{};
}

Image degrade_with(const Image& clean, K kind, std::uint64_t seed = 3) {
  Prng rng(seed);
  return degrade::apply_degradation(clean, matched_degradation(kind), rng);
}

bool is_smoothing(const std::string& name) {
  return name.rfind("denoise", 0) == 0 || name == "derain" || name == "dejpeg";
}

grad::Param& param_named(ToolSpec& tool, const std::string& suffix) {
  for (auto& p : tool.params)
    if (p.id() == tool.name + "." + suffix) return p;
  throw ParamError("no param " + suffix);
}

}  // namespace

TEST_CASE("registries") {
  const auto study = study_registry();
  REQUIRE(study.size() == 4);
  CHECK(study.at(ToolId{0}).name == "denoise_strong");
  CHECK(study.at(ToolId{1}).name == "derain");
  CHECK(study.at(ToolId{2}).name == "dehaze");
  CHECK(study.at(ToolId{3}).name == "defocus_deblur");

  const auto reg = default_registry();
  CHECK(reg.size() == 10);
  std::set<std::string> names;
  for (const auto& t : reg.tools()) {
    names.insert(t.name);
    CHECK(t.param_count() <= kMaxToolParams);
  }
  CHECK(names.size() == 10);
  for (auto k : kAllKinds) CHECK_FALSE(reg.by_target(k).empty());
  CHECK(reg.by_target(K::noise).size() == 3);
  CHECK(reg.id_of("dehaze") == *reg.find("dehaze"));
  CHECK_THROWS_AS(reg.id_of("defog"), ParamError);
  CHECK_THROWS_AS(registry_by_name("huge"), ConfigError);
}

TEST_CASE("dehaze inverts the scattering model with the true parameters") {
  Image clean = testing::texture(48, 17);
  for (double& v : clean.data) v = 0.15 + 0.7 * v;
  const double t = 0.55, a = 0.92;
  Prng rng(1);
  const Image hazy = degrade::apply_degradation(clean, degrade::HazeParams{t, a}, rng);
  auto reg = default_registry();
  auto& tool = reg.at(reg.id_of("dehaze"));
  param_named(tool, "airlight").value = {a};
  param_named(tool, "t_logit").value = {std::log(t / (1 - t))};
  CHECK(psnr(apply_tool(reg, reg.id_of("dehaze"), hazy), clean) > 40.0);
}

TEST_CASE("smoothing tools disturb clean input less than their matched degradation") {
  const auto reg = default_registry();
  const Image clean = testing::texture(48, 23);
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const ToolId id{i};
    const auto& tool = reg.at(id);
    if (!is_smoothing(tool.name)) continue;
    CAPTURE(tool.name);
    const Image lq = degrade_with(clean, tool.target);
    const double on_clean = testing::l1_distance(apply_tool(reg, id, clean), clean);
    const double on_lq = testing::l1_distance(apply_tool(reg, id, lq), lq);
    CHECK(on_clean < on_lq);
  }
}

TEST_CASE("enhancement tools move their matched degradation toward clean") {
  const auto reg = default_registry();
  const Image clean = testing::texture(48, 29);
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const ToolId id{i};
    const auto& tool = reg.at(id);
    if (is_smoothing(tool.name)) continue;
    CAPTURE(tool.name);
    const Image lq = degrade_with(clean, tool.target);
    CHECK(testing::l1_distance(apply_tool(reg, id, lq), clean) < testing::l1_distance(lq, clean));
  }
}

TEST_CASE("denoisers raise psnr on heavy noise") {
  const auto reg = default_registry();
  const Image clean = testing::texture(64, 31);
  const Image noisy = degrade_with(clean, K::noise);
  for (auto id : reg.by_target(K::noise)) {
    CAPTURE(reg.at(id).name);
    CHECK(psnr(apply_tool(reg, id, noisy), clean) > psnr(noisy, clean) + 0.5);
  }
}

TEST_CASE("taped and untaped outputs agree bit for bit") {
  auto reg = default_registry();
  const Image img = testing::texture(32, 37);
  for (std::size_t i = 0; i < reg.size(); ++i) {
    CAPTURE(reg.at(ToolId{i}).name);
    grad::Tape t;
    const auto out = apply_tool_taped(t, reg.at(ToolId{i}), t.constant(grad::Tensor::from_image(img)));
    CHECK(t.value(out).v == apply_tool(reg, ToolId{i}, img).data);
  }
}

TEST_CASE("tools compose and keep shape") {
  const auto reg = default_registry();
  const Image img = testing::texture(32, 41);
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const Image once = apply_tool(reg, ToolId{i}, img);
    const Image twice = apply_tool(reg, ToolId{i}, once);
    CHECK(twice.same_shape(img));
    CHECK_NOTHROW(validate(twice));
  }
  Image grey(32, 32, 1, 0.4);
  CHECK(apply_tool(reg, ToolId{0}, grey).channels == 1);
}

TEST_CASE("every tool passes the finite-difference check") {
  auto reg = default_registry();
  Image img = testing::texture(16, 43);
  for (double& v : img.data) v = 0.1 + 0.8 * v;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    auto& tool = reg.at(ToolId{i});
    CAPTURE(tool.name);
    std::vector<grad::Param*> ps;
    for (auto& p : tool.params) ps.push_back(&p);
    const auto report = grad::grad_check(
        [&](grad::Tape& t) {
          const auto out = apply_tool_taped(t, tool, t.constant(grad::Tensor::from_image(img)));
          return grad::square_mean(t, grad::sub(t, out, t.constant(grad::Tensor::from_image(testing::texture(16, 44)))));
        },
        ps);
    CHECK(report.fraction_within(1e-4) >= 0.99);
  }
}

TEST_CASE("OPPAR1 round trip and errors") {
  auto reg = default_registry();
  reg.at(ToolId{4}).params[0].value[0] = 0.8125;
  const auto dir = testing::scratch_dir("tools_params");
  save_params(reg, dir / "p.bin");
  auto fresh = default_registry();
  load_params(fresh, dir / "p.bin");
  CHECK(fresh.at(ToolId{4}).params[0].value[0] == 0.8125);
  CHECK(encode_params(fresh) == read_file(dir / "p.bin"));

  NamedArrays arrays = decode_named_arrays("OPPAR1", encode_params(reg));
  NamedArrays missing(arrays.begin() + 1, arrays.end());
  auto target = default_registry();
  try {
    decode_params(target, encode_named_arrays("OPPAR1", missing));
    FAIL("expected a missing-parameter error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(arrays.front().first) != std::string::npos);
  }
  NamedArrays longer = arrays;
  longer.front().second.push_back(0.0);
  CHECK_THROWS_WITH_AS(decode_params(target, encode_named_arrays("OPPAR1", longer)),
                       doctest::Contains("length mismatch"), FormatError);
  CHECK_THROWS_AS(decode_params(target, encode_named_arrays("OPPOL1", arrays)), FormatError);
}
