#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include "attrib3d/errors.hpp"
#include "attrib3d/frequency_fingerprint.hpp"
#include "attrib3d/image.hpp"
#include "attrib3d/rng.hpp"
#include "doctest.h"

using namespace attrib3d;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, 3);
  for (auto& x : img.data) x = static_cast<float>(rng.uniform());
  return img;
}

std::vector<double> random_field(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> f(static_cast<std::size_t>(h) * w);
  for (auto& x : f) x = rng.uniform(-1, 1);
  return f;
}

// Descriptor computed entirely with the direct DFT and explicit index loops.
std::vector<double> oracle_descriptor(const Image& img) {
  const int h = img.height, w = img.width;
  std::vector<double> gray(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      gray[y * w + x] = (double(img.at(y, x, 0)) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
  const auto spec = dft2d_direct(gray, h, w);
  std::vector<double> out(256);
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) {
      const int y0 = i * h / 16, y1 = ((i + 1) * h + 15) / 16;
      const int x0 = j * w / 16, x1 = ((j + 1) * w + 15) / 16;
      double s = 0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const int sy = (y - h / 2 + h) % h, sx = (x - w / 2 + w) % w;  // inverse of the centering shift
          s += std::log1p(std::abs(spec[sy * w + sx]));
        }
      }
      out[i * 16 + j] = s / ((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("impulse gives ln 2 in every pooled bin") {
  Image img(64, 64, 3, 0.0f);
  for (int c = 0; c < 3; ++c) img.at(0, 0, c) = 1.0f;
  const auto d = fft_descriptor(img);
  for (double v : d) CHECK(std::abs(v - std::log(2.0)) <= 1e-9);
}

TEST_CASE("constant image concentrates in the centre cell") {
  const float c = 0.37f;
  Image img(64, 64, 3, c);
  const auto d = fft_descriptor(img);
  const double centre = std::log1p(4096.0 * c) / 16.0;
  for (int i = 0; i < 256; ++i) {
    if (i == 8 * 16 + 8) {
      CHECK(d[i] == doctest::Approx(centre).epsilon(1e-12));
    } else {
      CHECK(std::abs(d[i]) <= 1e-9);
    }
  }
}

TEST_CASE("grayscale projection is idempotent") {
  Image img = random_image(32, 32, 3);
  Image flat = img;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const float m = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0f;
      for (int c = 0; c < 3; ++c) flat.at(y, x, c) = m;
    }
  }
  const auto a = fft_descriptor(img), b = fft_descriptor(flat);
  for (int i = 0; i < 256; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
}

TEST_CASE("fast transform matches the direct DFT") {
  for (auto [h, w] : {std::pair{16, 16}, std::pair{32, 32}, std::pair{8, 32}, std::pair{4, 2}}) {
    const auto field = random_field(h, w, static_cast<std::uint64_t>(h * 100 + w));
    const auto fast = fft2d(field, h, w);
    const auto slow = dft2d_direct(field, h, w);
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(std::abs(fast[i] - slow[i]) <= 1e-9);
  }
}

TEST_CASE("Parseval") {
  for (int n : {16, 32, 64}) {
    const auto field = random_field(n, n, static_cast<std::uint64_t>(n));
    const auto spec = fft2d(field, n, n);
    double lhs = 0, rhs = 0;
    for (const auto& z : spec) lhs += std::norm(z);
    for (double x : field) rhs += x * x;
    rhs *= n * n;
    CHECK(std::abs(lhs - rhs) <= 1e-6 * rhs);
  }
}

TEST_CASE("inverse FFT round trip") {
  Rng rng(4);
  std::vector<std::complex<double>> a(128);
  for (auto& z : a) z = {rng.uniform(), rng.uniform()};
  auto b = a;
  fft_inplace(b);
  fft_inplace(b, true);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  std::vector<std::complex<double>> bad(6);
  CHECK_THROWS_AS(fft_inplace(bad), SizeError);
}

TEST_CASE("centering twice is the identity on even sizes") {
  const auto f = random_field(8, 16, 2);
  CHECK(center_spectrum(center_spectrum(f, 8, 16), 8, 16) == f);
  const auto c = center_spectrum(f, 8, 16);
  CHECK(c[4 * 16 + 8] == f[0]);
}

TEST_CASE("adaptive pooling is a partition that preserves the mean") {
  for (int n : {32, 64, 128}) {
    const auto f = random_field(n, n, static_cast<std::uint64_t>(n) + 1);
    const auto p = adaptive_avg_pool(f, n, n, 16, 16);
    double mp = 0, mf = 0;
    for (double x : p) mp += x / 256;
    for (double x : f) mf += x / (n * n);
    CHECK(std::abs(mp - mf) <= 1e-9);
  }
  // uneven partition: 20 rows into 16 groups uses sizes 1 and 2
  std::vector<double> ramp(20 * 16);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 16; ++x) ramp[y * 16 + x] = y;
  const auto p = adaptive_avg_pool(ramp, 20, 16, 16, 16);
  CHECK(p[0] == doctest::Approx(0.5));  // rows [0, 2)
  CHECK(p[15 * 16] == doctest::Approx(18.5));  // rows [18, 20)
}

TEST_CASE("descriptor pipeline matches the direct-DFT oracle") {
  for (int n : {16, 32}) {
    const Image img = random_image(n, n, static_cast<std::uint64_t>(n) + 7);
    const auto fast = fft_descriptor(img);
    const auto slow = oracle_descriptor(img);
    for (int i = 0; i < 256; ++i) CHECK(std::abs(fast[i] - slow[i]) <= 1e-6 * std::max(1.0, std::abs(slow[i])));
  }
}

TEST_CASE("multi-view descriptor shape") {
  RenderSet set;
  const Image img = random_image(64, 64, 1);
  for (int v = 0; v < 4; ++v) set.rgb.push_back(img);
  const auto d = multi_view_fft(set);
  CHECK(d.flatten().size() == 1024);
  CHECK(d.per_view[0] == d.per_view[3]);
  CHECK(d.padded_height == 64);
  for (double x : d.flatten()) CHECK((x >= 0 && std::isfinite(x)));
}

TEST_CASE("non power-of-two sizes are zero-padded") {
  RenderSet set;
  set.rgb.push_back(random_image(20, 24, 3));
  const auto d = multi_view_fft(set);
  CHECK(d.padded_height == 32);
  CHECK(d.padded_width == 32);
}

TEST_CASE("descriptor errors") {
  CHECK_THROWS_AS(fft_descriptor(Image(15, 15, 3)), SizeError);
  Image img(16, 16, 3);
  img.at(3, 3, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(fft_descriptor(img), InputError);
}
