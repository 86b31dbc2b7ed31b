#include "vicc/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "vicc/errors.hpp"

namespace vicc {

void PhantomSpec::validate() const {
  if (height < 1 || width < 1) throw_contract("PhantomSpec: degenerate size");
  if (coils < 2) throw_contract("PhantomSpec: coils must be >= 2");
  if (sensitivity_width <= 0) throw_contract("PhantomSpec: sensitivity_width must be > 0");
  for (const auto& e : ellipses) {
    if (e.intensity < 0.0 || e.intensity > 1.0)
      throw_contract("PhantomSpec: ellipse intensity must be in [0, 1]");
    if (e.ax <= 0 || e.ay <= 0) throw_contract("PhantomSpec: ellipse axes must be > 0");
  }
}

PhantomSpec default_phantom_spec(int height, int width, int coils, uint64_t seed) {
  // Canonical head-like layout; jitter keeps slices structurally similar but
  // distinct across seeds.
  static const Ellipse base[] = {
      {0.00, 0.00, 0.84, 0.92, 0.0, 0.50},
      {0.00, -0.02, 0.70, 0.80, 0.0, 0.25},
      {0.24, 0.05, 0.20, 0.34, -18.0, 0.12},
      {-0.24, 0.05, 0.15, 0.40, 18.0, 0.12},
      {0.00, 0.38, 0.21, 0.23, 0.0, 0.10},
      {0.00, -0.12, 0.05, 0.05, 0.0, 0.08},
      {-0.10, -0.55, 0.05, 0.03, 0.0, 0.06},
      {0.08, -0.55, 0.03, 0.05, 0.0, 0.06},
  };
  PhantomSpec spec;
  spec.height = height;
  spec.width = width;
  spec.coils = coils;
  spec.coil_radius = 0.55;
  spec.sensitivity_width = 0.4 * std::min(height, width);
  spec.seed = seed;
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x1234abcdULL);
  for (const Ellipse& e : base) {
    Ellipse j = e;
    j.cx += rng.uniform(-0.04, 0.04);
    j.cy += rng.uniform(-0.04, 0.04);
    j.ax *= 1.0 + rng.uniform(-0.10, 0.10);
    j.ay *= 1.0 + rng.uniform(-0.10, 0.10);
    j.angle_deg += rng.uniform(-10.0, 10.0);
    j.intensity = std::clamp(j.intensity * (1.0 + rng.uniform(-0.10, 0.10)), 0.0, 1.0);
    spec.ellipses.push_back(j);
  }
  return spec;
}

RealImage render_ellipses(const PhantomSpec& spec) {
  RealImage out(spec.height, spec.width);
  const double half_h = (spec.height - 1) / 2.0;
  const double half_w = (spec.width - 1) / 2.0;
  for (const Ellipse& e : spec.ellipses) {
    const double theta = e.angle_deg * M_PI / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int r = 0; r < spec.height; ++r) {
      // y grows upward in FOV units
      const double y = half_h > 0 ? (half_h - r) / half_h : 0.0;
      for (int c = 0; c < spec.width; ++c) {
        const double x = half_w > 0 ? (c - half_w) / half_w : 0.0;
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = (ct * dx + st * dy) / e.ax;
        const double v = (-st * dx + ct * dy) / e.ay;
        if (u * u + v * v <= 1.0) out.at(r, c) += e.intensity;
      }
    }
  }
  return out;
}

ComplexImage make_sensitivities(const PhantomSpec& spec) {
  spec.validate();
  const int h = spec.height, w = spec.width, nc = spec.coils;
  const double half_h = (h - 1) / 2.0;
  const double half_w = (w - 1) / 2.0;
  const double radius = spec.coil_radius * std::min(half_h, half_w);
  const double two_sigma_sq = 2.0 * spec.sensitivity_width * spec.sensitivity_width;

  // Seeded smooth linear phase per coil; magnitudes are untouched by it.
  Rng rng(spec.seed * 0x9e3779b97f4a7c15ULL + 0x5eedULL);
  std::vector<double> phase_x(nc), phase_y(nc), phase_0(nc);
  const double max_grad = M_PI / (2.0 * std::max(h, w));
  for (int c = 0; c < nc; ++c) {
    phase_x[c] = rng.uniform(-max_grad, max_grad);
    phase_y[c] = rng.uniform(-max_grad, max_grad);
    phase_0[c] = rng.uniform(-M_PI, M_PI);
  }

  ComplexImage maps(nc, h, w, Domain::Image);
  std::vector<double> mag(static_cast<size_t>(nc) * h * w);
  std::vector<double> nrm(static_cast<size_t>(h) * w, 0.0);
  for (int c = 0; c < nc; ++c) {
    const double angle = 2.0 * M_PI * c / nc;
    const double qx = half_w + radius * std::cos(angle);
    const double qy = half_h + radius * std::sin(angle);
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const double dx = col - qx, dy = r - qy;
        const double g = std::exp(-(dx * dx + dy * dy) / two_sigma_sq);
        mag[(static_cast<size_t>(c) * h + r) * w + col] = g;
        nrm[static_cast<size_t>(r) * w + col] += g * g;
      }
    }
  }
  for (auto& v : nrm) v = std::sqrt(v);
  for (int c = 0; c < nc; ++c) {
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const size_t pi = static_cast<size_t>(r) * w + col;
        const double g = mag[(static_cast<size_t>(c) * h + r) * w + col] / nrm[pi];
        const double ph = phase_0[c] + phase_x[c] * col + phase_y[c] * r;
        maps.at(c, r, col) = std::polar(g, ph);
      }
    }
  }
  return maps;
}

ComplexImage make_phantom(const PhantomSpec& spec) {
  spec.validate();
  RealImage base = render_ellipses(spec);
  ComplexImage maps = make_sensitivities(spec);
  ComplexImage out(spec.coils, spec.height, spec.width, Domain::Image);
  for (int c = 0; c < spec.coils; ++c) {
    const std::complex<double>* s = maps.coil(c);
    std::complex<double>* p = out.coil(c);
    for (size_t i = 0; i < out.plane_size(); ++i) p[i] = s[i] * base.data[i];
  }
  return out;
}

void add_complex_noise(ComplexImage& img, double sigma, Rng& rng) {
  if (sigma <= 0) return;
  for (auto& z : img.data) z += sigma * rng.cnormal();
}

bool SamplingMask::keeps(int col) const {
  return std::binary_search(kept_lines.begin(), kept_lines.end(), col);
}

SamplingMask make_mask(int height, int width, int acceleration, int acs_lines) {
  if (acceleration < 1) throw_contract("make_mask: acceleration must be >= 1");
  if (acs_lines < 1 || acs_lines > width) throw_contract("make_mask: acs_lines out of range");
  SamplingMask m;
  m.height = height;
  m.width = width;
  m.acceleration = acceleration;
  m.acs_lines = acs_lines;
  std::vector<char> keep(width, 0);
  for (int c = 0; c < width; c += acceleration) keep[c] = 1;
  const int acs_start = width / 2 - acs_lines / 2;
  for (int c = acs_start; c < acs_start + acs_lines; ++c) keep[c] = 1;
  for (int c = 0; c < width; ++c)
    if (keep[c]) m.kept_lines.push_back(c);
  return m;
}

ComplexImage apply_mask(const ComplexImage& ksp, const SamplingMask& mask) {
  ksp.check();
  if (ksp.height != mask.height || ksp.width != mask.width)
    throw_contract("apply_mask: mask shape mismatch");
  ComplexImage out = ksp;
  std::vector<char> keep(mask.width, 0);
  for (int c : mask.kept_lines) keep[c] = 1;
  for (int c = 0; c < out.coils; ++c) {
    std::complex<double>* p = out.coil(c);
    for (int r = 0; r < out.height; ++r) {
      for (int col = 0; col < out.width; ++col) {
        if (!keep[col]) p[static_cast<size_t>(r) * out.width + col] = 0.0;
      }
    }
  }
  return out;
}

}  // namespace vicc
