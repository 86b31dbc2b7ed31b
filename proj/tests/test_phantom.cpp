#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "vicc/errors.hpp"
#include "vicc/phantom.hpp"

using namespace vicc;

TEST_CASE("two opposite coils give mirror-image magnitude maps") {
  PhantomSpec spec = default_phantom_spec(32, 32, 2, 5);
  const ComplexImage maps = make_sensitivities(spec);
  double max_diff = 0.0;
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 32; ++c) {
      const double a = std::abs(maps.at(0, r, c));
      const double b = std::abs(maps.at(1, r, 31 - c));
      max_diff = std::max(max_diff, std::abs(a - b));
    }
  }
  CHECK(max_diff <= 1e-12);
}

TEST_CASE("per-pixel sos of sensitivity maps stays within [0.99, 1.01]") {
  PhantomSpec spec = default_phantom_spec(48, 40, 8, 3);
  const ComplexImage maps = make_sensitivities(spec);
  const RealImage s = sos(maps);
  for (double v : s.data) {
    CHECK(v >= 0.99);
    CHECK(v <= 1.01);
  }
}

TEST_CASE("identical seeds give bit-identical phantoms") {
  const ComplexImage a = make_phantom(default_phantom_spec(32, 32, 4, 17));
  const ComplexImage b = make_phantom(default_phantom_spec(32, 32, 4, 17));
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);
  const ComplexImage c = make_phantom(default_phantom_spec(32, 32, 4, 18));
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs |= (a.data[i] != c.data[i]);
  CHECK(differs);
}

TEST_CASE("empty ellipse list renders to zero") {
  PhantomSpec spec = default_phantom_spec(16, 16, 2, 0);
  spec.ellipses.clear();
  const ComplexImage img = make_phantom(spec);
  for (const auto& z : img.data) CHECK(std::abs(z) == 0.0);
}

TEST_CASE("single ellipse against the point-in-ellipse oracle") {
  PhantomSpec spec = default_phantom_spec(33, 41, 2, 0);
  spec.ellipses = {{0.1, -0.2, 0.5, 0.3, 25.0, 1.0}};
  const RealImage img = render_ellipses(spec);
  const double half_h = (spec.height - 1) / 2.0;
  const double half_w = (spec.width - 1) / 2.0;
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      const double y = (half_h - r) / half_h;
      const double x = (c - half_w) / half_w;
      const bool inside = oracle::point_in_ellipse(x, y, 0.1, -0.2, 0.5, 0.3, 25.0);
      CHECK(img.at(r, c) == (inside ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("sos of the multi-coil phantom reproduces the single-channel render within 1%") {
  PhantomSpec spec = default_phantom_spec(64, 64, 8, 21);
  const RealImage base = render_ellipses(spec);
  const RealImage s = sos(make_phantom(spec));
  for (size_t i = 0; i < base.size(); ++i) {
    if (base.data[i] > 1e-9) {
      CHECK(std::abs(s.data[i] - base.data[i]) / base.data[i] <= 0.01);
    }
  }
}

TEST_CASE("make_mask: R=1 keeps everything and apply_mask is the identity") {
  const SamplingMask m = make_mask(8, 12, 1, 4);
  CHECK(static_cast<int>(m.kept_lines.size()) == 12);
  Rng rng(2);
  const ComplexImage x = oracle::random_image(2, 8, 12, Domain::KSpace, rng);
  const ComplexImage y = apply_mask(x, m);
  for (size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("make_mask: w=12 R=3 acs=4 equals the set oracle") {
  const SamplingMask m = make_mask(6, 12, 3, 4);
  std::set<int> want = {0, 3, 6, 9};
  for (int c = 4; c < 8; ++c) want.insert(c);
  const std::set<int> got(m.kept_lines.begin(), m.kept_lines.end());
  CHECK(got == want);
}

TEST_CASE("apply_mask is exactly idempotent and zeroes dropped columns") {
  Rng rng(3);
  const SamplingMask m = make_mask(9, 15, 3, 5);
  const ComplexImage x = oracle::random_image(3, 9, 15, Domain::KSpace, rng);
  const ComplexImage once = apply_mask(x, m);
  const ComplexImage twice = apply_mask(once, m);
  for (size_t i = 0; i < x.size(); ++i) CHECK(once.data[i] == twice.data[i]);
  for (int col = 0; col < 15; ++col) {
    if (!m.keeps(col)) {
      for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 9; ++r) CHECK(std::abs(once.at(c, r, col)) == 0.0);
    }
  }
}

TEST_CASE("mask kept fraction stays within the declared band") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int w = 16 + rng.uniform_int(80);
    const int r = 1 + rng.uniform_int(5);
    const int acs = 1 + rng.uniform_int(w / 2);
    const SamplingMask m = make_mask(8, w, r, acs);
    const double frac = static_cast<double>(m.kept_lines.size()) / w;
    CHECK(frac >= 1.0 / r - 2.0 / w);
    CHECK(frac <= 1.0 / r + (acs + 2.0) / w);
    CHECK(std::is_sorted(m.kept_lines.begin(), m.kept_lines.end()));
    // ACS block fully present and contiguous
    const int start = w / 2 - acs / 2;
    for (int c = start; c < start + acs; ++c) CHECK(m.keeps(c));
  }
}

TEST_CASE("mask argument validation") {
  CHECK_THROWS_AS(make_mask(8, 8, 3, 9), Error);
  CHECK_THROWS_AS(make_mask(8, 8, 0, 2), Error);
  PhantomSpec spec = default_phantom_spec(16, 16, 1, 0);
  CHECK_THROWS_AS(make_phantom(spec), Error);
}
