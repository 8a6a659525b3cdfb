#include <array>
#include <cmath>
#include <set>
#include <string>

#include "coopir/error.hpp"
#include "coopir/image.hpp"
#include "coopir/io.hpp"
#include "coopir/kinds.hpp"
#include "coopir/metrics.hpp"
#include "coopir/prng.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coopir;

namespace {

// Direct 2-D SSIM: explicit 11x11 Gaussian window (sigma 1.5), replicate
// borders, per-pixel weighted moments. Shares no code with the library.
double ssim_oracle(const Image& a, const Image& b) {
  const Plane ya = luma(a), yb = luma(b);
  const int r = 5;
  double w[11][11];
  double total = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) total += w[i + r][j + r] = std::exp(-(i * i + j * j) / (2.0 * 1.5 * 1.5));
  const double c1 = 1e-4, c2 = 9e-4;
  auto px = [](const Plane& p, int y, int x) {
    y = std::clamp(y, 0, p.height - 1);
    x = std::clamp(x, 0, p.width - 1);
    return p.v[static_cast<std::size_t>(y) * p.width + x];
  };
  double acc = 0.0;
  for (int y = 0; y < ya.height; ++y)
    for (int x = 0; x < ya.width; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const double k = w[i + r][j + r] / total;
          const double va = px(ya, y + i, x + j), vb = px(yb, y + i, x + j);
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      const double vara = saa - ma * ma, varb = sbb - mb * mb, cov = sab - ma * mb;
      acc += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (vara + varb + c2));
    }
  return acc / (ya.height * ya.width);
}

// Gradient similarity straight from its definition with a hand-written Sobel.
double gsim_oracle(const Image& a, const Image& b) {
  auto grad_mag = [](const Plane& p, int y, int x) {
    auto v = [&](int yy, int xx) {
      yy = std::clamp(yy, 0, p.height - 1);
      xx = std::clamp(xx, 0, p.width - 1);
      return p.v[static_cast<std::size_t>(yy) * p.width + xx];
    };
    const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    double gx = 0, gy = 0;
    for (int i = -1; i <= 1; ++i)
      for (int j = -1; j <= 1; ++j) {
        gx += kx[i + 1][j + 1] * v(y + i, x + j);
        gy += kx[j + 1][i + 1] * v(y + i, x + j);
      }
    return std::hypot(gx, gy);
  };
  const Plane ya = luma(a), yb = luma(b);
  double acc = 0;
  for (int y = 0; y < ya.height; ++y)
    for (int x = 0; x < ya.width; ++x) {
      const double p = grad_mag(ya, y, x), g = grad_mag(yb, y, x);
      acc += (2 * p * g + 1e-4) / (p * p + g * g + 1e-4);
    }
  return acc / (ya.height * ya.width);
}

Image checkerboard(int size, int tile, bool inverted) {
  Image img(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool on = ((y / tile + x / tile) % 2 == 0) != inverted;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = on ? 1.0 : 0.0;
    }
  return img;
}

Image box3(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double s = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            s += img.at(std::clamp(y + dy, 0, img.height - 1), std::clamp(x + dx, 0, img.width - 1), c);
        out.at(y, x, c) = s / 9.0;
      }
  return out;
}

}  // namespace

TEST_CASE("prng is deterministic and bounded") {
  Prng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Prng r(1);
  std::set<int> seen;
  for (int i = 0; i < 2000; ++i) {
    const int v = r.uniform_int(-2, 3);
    CHECK(v >= -2);
    CHECK(v <= 3);
    seen.insert(v);
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(seen.size() == 6);
  CHECK(derive_seed(5, 3) == splitmix64(5 ^ 3));
  CHECK(derive_seed(5, 3) != derive_seed(5, 4));
}

TEST_CASE("normal draws have unit moments") {
  Prng r(9);
  double s = 0, ss = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    ss += z * z;
  }
  CHECK(std::abs(s / n) < 0.03);
  CHECK(std::abs(ss / n - 1.0) < 0.03);
}

TEST_CASE("kind names and sets") {
  for (auto k : kAllKinds) CHECK(kind_from_name(kind_name(k)) == k);
  CHECK_FALSE(kind_from_name("fog").has_value());
  const KindSet s{DegradationKind::haze, DegradationKind::rain};
  CHECK(s.size() == 2);
  CHECK(s.label() == "rain+haze");
  CHECK(s.contains(DegradationKind::rain));
  CHECK_FALSE(s.contains(DegradationKind::noise));
}

TEST_CASE("f1 conventions and values") {
  using K = DegradationKind;
  CHECK(f1_score({}, {}) == 1.0);
  CHECK(f1_score({K::noise}, {}) == 0.0);
  CHECK(f1_score({}, {K::noise}) == 0.0);
  CHECK(f1_score({K::noise, K::rain}, {K::noise}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(f1_score({K::haze}, {K::noise}) == 0.0);
  CHECK(f1_score({K::haze, K::rain}, {K::rain, K::haze}) == 1.0);
}

TEST_CASE("image validation") {
  CHECK_THROWS_AS(validate(Image(4, 4, 3)), ShapeError);
  CHECK_THROWS_AS(validate(Image(8, 8, 2)), ShapeError);
  Image bad(8, 8, 1, 0.5);
  bad.data[3] = 1.5;
  CHECK_THROWS_AS(validate(bad), FormatError);
  bad.data[3] = std::nan("");
  CHECK_THROWS_AS(validate(bad), FormatError);
  CHECK_NOTHROW(validate(Image(8, 8, 1, 0.5)));
  CHECK_THROWS_AS(psnr(Image(8, 8, 3), Image(9, 8, 3)), ShapeError);
}

TEST_CASE("psnr examples") {
  const Image x = testing::texture();
  CHECK(psnr(x, x) == 100.0);
  CHECK(psnr(testing::constant(16, 16, 0.0), testing::constant(16, 16, 1.0)) == doctest::Approx(0.0).epsilon(1e-12));
  Image lo = testing::constant(16, 16, 0.3), hi = testing::constant(16, 16, 0.4);
  CHECK(psnr(lo, hi) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("ssim examples") {
  const Image x = testing::texture();
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));
  const double expected = (2 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4);
  CHECK(ssim(testing::constant(16, 16, 0.5), testing::constant(16, 16, 0.25)) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(0.8001).epsilon(1e-3));
  const Image a = checkerboard(32, 4, false), b = checkerboard(32, 4, true);
  const double oracle = ssim_oracle(a, b);
  CHECK(oracle < 0.0);
  CHECK(ssim(a, b) == doctest::Approx(oracle).epsilon(1e-10));
  const Image t = testing::texture(24, 3), u = testing::texture(24, 4);
  CHECK(ssim(t, u) == doctest::Approx(ssim_oracle(t, u)).epsilon(1e-10));
}

TEST_CASE("gsim examples") {
  const Image x = testing::texture();
  CHECK(gsim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gsim(testing::constant(16, 16, 0.2), testing::constant(16, 16, 0.7)) == 1.0);
  Image edge(32, 32, 3, 0.1);
  for (int y = 0; y < 32; ++y)
    for (int x2 = 16; x2 < 32; ++x2)
      for (int c = 0; c < 3; ++c) edge.at(y, x2, c) = 0.9;
  Image blurred = edge;
  for (int y = 0; y < 32; ++y)
    for (int x2 = 0; x2 < 32; ++x2)
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx) s += edge.at(std::clamp(y + dy, 0, 31), std::clamp(x2 + dx, 0, 31), c);
        blurred.at(y, x2, c) = s / 25.0;
      }
  const double oracle = gsim_oracle(blurred, edge);
  CHECK(oracle < 1.0);
  CHECK(gsim(blurred, edge) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("no-reference metrics") {
  const NoReference flat = nr_metrics(testing::constant(16, 16, 0.4));
  CHECK(flat.sharp == 0.0);
  CHECK(flat.balance == 0.0);

  Image t = testing::texture(48, 21);
  double prev = nr_metrics(t).sharp;
  for (int i = 0; i < 3; ++i) {
    t = box3(t);
    const double s = nr_metrics(t).sharp;
    CHECK(s < prev);
    prev = s;
  }

  const Image clean = testing::texture(48, 22);
  Prng rng(5);
  Image noisy = clean;
  for (double& v : noisy.data) v = std::clamp(v + rng.normal() * 50.0 / 255.0, 0.0, 1.0);
  CHECK(nr_metrics(clean).balance > nr_metrics(noisy).balance);

  const MetricVector m = evaluate_metrics(noisy, clean);
  CHECK(m[0] == m.psnr);
  CHECK(m[4] == m.nr_balance);
  CHECK_THROWS_AS(m[5], ShapeError);
}

TEST_CASE("OPIMG1 round trip and errors") {
  const Image x = testing::texture(16, 8);
  const auto dir = testing::scratch_dir("core_io");
  save_image(x, dir / "x.opimg");
  const Image y = load_image(dir / "x.opimg");
  CHECK(y.same_shape(x));
  CHECK(y.data == x.data);

  std::string bytes = encode_image(x);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_image(bytes), FormatError);
  CHECK_THROWS_AS(decode_image(encode_image(x).substr(0, 40)), FormatError);
  CHECK_THROWS_AS(load_image(dir / "missing.opimg"), Error);
}

TEST_CASE("PPM quantization") {
  const std::string ppm = encode_ppm(testing::constant(8, 8, 0.5));
  const std::string header = "P6\n8 8\n255\n";
  REQUIRE(ppm.substr(0, header.size()) == header);
  REQUIRE(ppm.size() == header.size() + 8 * 8 * 3);
  for (std::size_t i = header.size(); i < ppm.size(); ++i) CHECK(static_cast<unsigned char>(ppm[i]) == 128);
}

TEST_CASE("named arrays reject bad payloads") {
  const NamedArrays arrays = {{"a", {1.0, 2.0}}, {"bb", {}}};
  const std::string bytes = encode_named_arrays("OPTST1", arrays);
  CHECK(decode_named_arrays("OPTST1", bytes) == arrays);
  CHECK_THROWS_AS(decode_named_arrays("OPXXX1", bytes), FormatError);
  CHECK_THROWS_AS(decode_named_arrays("OPTST1", bytes.substr(0, bytes.size() - 3)), FormatError);
}
