#pragma once

#include <cstdint>
#include <vector>

#include "vicc/image.hpp"
#include "vicc/rng.hpp"

namespace vicc {

/// Ellipse in centered field-of-view units: centers and semi-axes are
/// fractions of the half-FOV, angle in degrees.
struct Ellipse {
  double cx = 0, cy = 0;
  double ax = 0.5, ay = 0.5;
  double angle_deg = 0;
  double intensity = 1.0;
};

struct PhantomSpec {
  int height = 64, width = 64;
  int coils = 8;
  std::vector<Ellipse> ellipses;
  double coil_radius = 0.55;       // coil-center circle radius, fraction of half-FOV
  double sensitivity_width = 24.0; // Gaussian sigma in pixels
  uint64_t seed = 0;

  void validate() const;  // throws Contract on bad fields
};

/// Ellipse stack for the given geometry with seeded jitter of the canonical
/// layout, so different seeds give different but structurally similar slices.
PhantomSpec default_phantom_spec(int height, int width, int coils, uint64_t seed);

/// Single-channel ellipse superposition (no coil weighting).
RealImage render_ellipses(const PhantomSpec& spec);

/// C complex coil sensitivity maps: Gaussian magnitudes centered on a circle,
/// seeded smooth linear phase, normalized so the per-pixel sos is 1.
ComplexImage make_sensitivities(const PhantomSpec& spec);

/// Multi-coil phantom slice: render_ellipses * sensitivities, image domain.
ComplexImage make_phantom(const PhantomSpec& spec);

/// Additive complex Gaussian noise with per-component std sigma.
void add_complex_noise(ComplexImage& img, double sigma, Rng& rng);

/// Cartesian column mask: every R-th phase-encode column plus a centered
/// contiguous ACS block.
struct SamplingMask {
  int height = 0, width = 0;
  int acceleration = 1;
  int acs_lines = 0;
  std::vector<int> kept_lines;  // sorted column indices

  bool keeps(int col) const;
};

SamplingMask make_mask(int height, int width, int acceleration, int acs_lines);

/// Zero every non-kept column of every coil. Idempotent.
ComplexImage apply_mask(const ComplexImage& ksp, const SamplingMask& mask);

}  // namespace vicc
