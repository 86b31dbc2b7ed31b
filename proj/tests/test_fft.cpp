#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vicc/errors.hpp"
#include "vicc/fft.hpp"

using namespace vicc;

namespace {

double rel_image_err(const ComplexImage& got, const ComplexImage& want) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < want.size(); ++i) {
    num += std::norm(got.data[i] - want.data[i]);
    den += std::norm(want.data[i]);
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("fft2c of a constant 4x4 image is a single centered DC bin of magnitude 4") {
  ComplexImage img(1, 4, 4, Domain::Image);
  for (auto& z : img.data) z = 1.0;
  const ComplexImage ksp = fft2c(img);
  CHECK(ksp.domain == Domain::KSpace);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      const double mag = std::abs(ksp.at(0, r, c));
      if (r == 2 && c == 2) {
        CHECK(mag == doctest::Approx(4.0).epsilon(1e-12));
      } else {
        CHECK(mag <= 1e-12);
      }
    }
  }
}

TEST_CASE("ifft2c of a centered DC bin of magnitude 4 is a constant image") {
  ComplexImage ksp(1, 4, 4, Domain::KSpace);
  ksp.at(0, 2, 2) = 4.0;
  const ComplexImage img = ifft2c(ksp);
  CHECK(img.domain == Domain::Image);
  for (const auto& z : img.data) {
    CHECK(z.real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(z.imag()) <= 1e-12);
  }
}

TEST_CASE("roundtrip and Parseval on every size 2..64 per dimension") {
  Rng rng(7);
  double worst_roundtrip = 0.0, worst_parseval = 0.0;
  for (int h = 2; h <= 64; ++h) {
    for (int w = 2; w <= 64; ++w) {
      const ComplexImage x = oracle::random_image(1, h, w, Domain::Image, rng);
      const ComplexImage k = fft2c(x);
      worst_parseval = std::max(worst_parseval,
                                std::abs(l2_norm(k) - l2_norm(x)) / l2_norm(x));
      worst_roundtrip = std::max(worst_roundtrip, rel_image_err(ifft2c(k), x));
    }
  }
  CHECK(worst_roundtrip <= 1e-10);
  CHECK(worst_parseval <= 1e-10);
}

TEST_CASE("forward roundtrip fft2c(ifft2c(y)) == y and multi-coil Parseval") {
  Rng rng(8);
  const ComplexImage y = oracle::random_image(3, 8, 8, Domain::KSpace, rng);
  CHECK(rel_image_err(fft2c(ifft2c(y)), y) <= 1e-10);
  CHECK(std::abs(l2_norm(fft2c(ifft2c(y))) - l2_norm(y)) / l2_norm(y) <= 1e-10);
}

TEST_CASE("domain tags are enforced and flipped") {
  ComplexImage img(1, 4, 4, Domain::Image);
  CHECK_THROWS_AS(ifft2c(img), Error);
  const ComplexImage k = fft2c(img);
  CHECK(k.domain == Domain::KSpace);
  CHECK_THROWS_AS(fft2c(k), Error);
  CHECK(ifft2c(k).domain == Domain::Image);
}

TEST_CASE("fft1c_readout roundtrips and preserves norm on odd heights") {
  Rng rng(9);
  const ComplexImage x = oracle::random_image(2, 17, 6, Domain::KSpace, rng);
  const ComplexImage hybrid = fft1c_readout(x, true);
  CHECK(std::abs(l2_norm(hybrid) - l2_norm(x)) / l2_norm(x) <= 1e-12);
  CHECK(rel_image_err(fft1c_readout(hybrid, false), x) <= 1e-12);
}
