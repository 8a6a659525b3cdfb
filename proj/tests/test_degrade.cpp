#include <array>
#include <cmath>
#include <set>

#include "coopir/degrade.hpp"
#include "coopir/error.hpp"
#include "coopir/metrics.hpp"
#include "coopir/serialize.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coopir;
using namespace coopir::degrade;
using K = DegradationKind;

TEST_CASE("haze limits") {
  const Image x = testing::texture(32, 2);
  Prng rng(1);
  const Image same = apply_degradation(x, HazeParams{1.0, 0.9}, rng);
  CHECK(same.data == x.data);
  const Image flat = apply_degradation(x, HazeParams{0.0, 0.9}, rng);
  for (double v : flat.data) CHECK(v == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("noise moments on a constant image") {
  const Image x = testing::constant(128, 128, 0.5);
  Prng rng(3);
  const Image y = apply_degradation(x, NoiseParams{25.0 / 255.0}, rng);
  double s = 0, ss = 0;
  for (double v : y.data) {
    s += v - 0.5;
    ss += (v - 0.5) * (v - 0.5);
  }
  const double n = static_cast<double>(y.size());
  const double sd = std::sqrt(ss / n - (s / n) * (s / n));
  CHECK(std::abs(sd - 25.0 / 255.0) < 0.1 * 25.0 / 255.0);
}

TEST_CASE("every degradation keeps shape and range and changes a texture") {
  const Image x = testing::texture(32, 4);
  for (auto k : kAllKinds) {
    CAPTURE(kind_name(k));
    Prng rng(10);
    const auto params = sample_params(k, rng);
    CHECK(kind_of(params) == k);
    CHECK_NOTHROW(check_params(params));
    const Image y = apply_degradation(x, params, rng);
    CHECK(y.same_shape(x));
    CHECK_NOTHROW(validate(y));
    CHECK(testing::l1_distance(x, y) > 1e-4);
  }
}

TEST_CASE("parameter checks") {
  CHECK_THROWS_AS(check_params(NoiseParams{0.9}), ParamError);
  CHECK_THROWS_AS(check_params(JpegParams{95.0}), ParamError);
  CHECK_THROWS_AS(check_params(LowResParams{3}), ParamError);
  CHECK_THROWS_AS(check_params(HazeParams{1.5, 0.9}), ParamError);
  CHECK_NOTHROW(check_params(HazeParams{1.0, 0.9}));
}

TEST_CASE("synthesize collects the kind set") {
  const Image x = testing::texture(32, 5);
  DegradationSpec one{{{K::noise, NoiseParams{}}}, 4};
  CHECK(synthesize(x, one).gt_set == KindSet{K::noise});

  DegradationSpec two{{{K::rain, RainParams{}}, {K::haze, HazeParams{}}}, 9};
  const auto out = synthesize(x, two);
  CHECK(out.gt_set == KindSet{K::rain, K::haze});
  DegradationSpec rain_only{{{K::rain, RainParams{}}}, 9};
  CHECK(out.lq.data != x.data);
  CHECK(out.lq.data != synthesize(x, rain_only).lq.data);

  const auto again = synthesize(x, two);
  CHECK(again.lq.data == out.lq.data);

  CHECK_THROWS_AS(synthesize(x, DegradationSpec{}), ParamError);
}

TEST_CASE("make_spec follows the application order") {
  const KindSet combo{K::noise, K::haze, K::defocus_blur};
  const auto spec = make_spec(combo, 77);
  REQUIRE(spec.steps.size() == 3);
  CHECK(spec.steps[0].kind == K::defocus_blur);
  CHECK(spec.steps[1].kind == K::haze);
  CHECK(spec.steps[2].kind == K::noise);
  const auto again = make_spec(combo, 77);
  CHECK(spec_to_json(again) == spec_to_json(spec));
}

TEST_CASE("spec json round trip") {
  const auto spec = make_spec(KindSet{K::rain, K::jpeg, K::low_light, K::motion_blur}, 123);
  const Json j = spec_to_json(spec);
  const auto back = spec_from_json(j);
  CHECK(spec_to_json(back) == j);
  Json bad = j;
  bad["steps"][0]["params"]["bogus"] = 1;
  CHECK_THROWS_AS(spec_from_json(bad), FormatError);
}

TEST_CASE("combo sampling") {
  ComboTable singles_only = full_table();
  singles_only.weights = {1.0, 0.0, 0.0};
  Prng rng(8);
  for (int i = 0; i < 200; ++i) CHECK(sample_combo(singles_only, rng).size() == 1);

  const ComboTable table = full_table();
  std::array<int, 3> tiers{};
  Prng r2(2024);
  const int n = 9000;
  for (int i = 0; i < n; ++i) ++tiers[sample_combo(table, r2).size() - 1];
  const std::array<double, 3> expect = {1.0 / 9, 3.0 / 9, 5.0 / 9};
  for (int t = 0; t < 3; ++t) CHECK(std::abs(tiers[t] / double(n) - expect[t]) < 0.02);

  ComboTable tiny;
  tiny.singles = {KindSet{K::noise}};
  tiny.duals = {KindSet{K::noise, K::rain}};
  tiny.triples = {KindSet{K::noise, K::rain, K::haze}};
  std::array<int, 3> c{};
  Prng r3(99);
  for (int i = 0; i < n; ++i) ++c[sample_combo(tiny, r3).size() - 1];
  double chi2 = 0;
  for (int t = 0; t < 3; ++t) {
    const double e = expect[t] * n;
    chi2 += (c[t] - e) * (c[t] - e) / e;
  }
  CHECK(chi2 < 5.991);  // 2 degrees of freedom, 5% level
}

TEST_CASE("presets") {
  const auto e8 = preset("empirical8");
  CHECK(e8.singles.empty());
  CHECK(e8.duals.size() == 6);
  CHECK(e8.triples.size() == 2);
  const auto c = preset("groupC").all();
  CHECK(std::find(c.begin(), c.end(), KindSet{K::haze, K::motion_blur, K::low_resolution}) != c.end());
  CHECK(c.size() == 4);
  CHECK(preset("groupB").all().size() == 4);
  CHECK(preset("groupA").all().size() == 8);
  const auto all = full_table();
  CHECK(all.singles.size() == 8);
  CHECK(all.duals.size() == 28);
  CHECK(all.triples.size() == 56);
  CHECK_THROWS_AS(preset("groupZ"), ConfigError);
}

TEST_CASE("clean generators") {
  Prng rng(1);
  const Image ch = gen_clean(CleanKind::checker, 64, rng);
  CHECK(ch.at(0, 0, 0) == 0.2);
  CHECK(ch.at(0, 7, 1) == 0.2);
  CHECK(ch.at(0, 8, 2) == 0.8);
  CHECK(ch.at(8, 0, 0) == 0.8);
  CHECK(ch.at(8, 8, 0) == 0.2);

  Prng g(4);
  CHECK(nr_metrics(gen_clean(CleanKind::gradient, 64, g)).sharp > 0.0);

  for (auto kind : {CleanKind::gradient, CleanKind::checker, CleanKind::value_noise_texture, CleanKind::shapes}) {
    Prng a(31), b(31);
    const Image x = gen_clean(kind, 32, a);
    CHECK(x.data == gen_clean(kind, 32, b).data);
    CHECK_NOTHROW(validate(x));
    CHECK(clean_kind_from_name(clean_kind_name(kind)) == kind);
  }
}

TEST_CASE("blur kernels are normalized") {
  for (double r : {2.0, 3.5, 5.0}) {
    const Kernel k = disk_kernel(r);
    double s = 0;
    for (double w : k.w) s += w;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Kernel m = motion_kernel(9.0, 0.3);
  double s = 0;
  for (double w : m.w) s += w;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  const Image flat = testing::constant(16, 16, 0.37);
  for (double v : convolve_replicate(flat, m).data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("ranges json overlay") {
  Json j = ranges_to_json({});
  j["haze_airlight"] = Json::array({0.7, 0.75});
  const auto r = ranges_from_json(j);
  CHECK(r.haze_airlight[0] == 0.7);
  CHECK_THROWS_AS(ranges_from_json(Json{{"fog_density", 1}}), ConfigError);
}
