#pragma once

// Test-only reference implementations, kept deliberately independent of the
// library code paths they check: plain scalar loops, cofactor expansions and
// a hand-rolled one-sided Jacobi SVD.

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "vicc/image.hpp"
#include "vicc/rng.hpp"
#include "vicc/tensor.hpp"

namespace oracle {

using Cplx = std::complex<double>;

inline double rel_err(double got, double want, double floor = 1e-300) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

// ---------------------------------------------------------------------------
// scalar image oracles
// ---------------------------------------------------------------------------

/// Per-pixel sum of squared magnitudes via plain scalar loops.
inline std::vector<double> sos_squared(const vicc::ComplexImage& img) {
  std::vector<double> out(img.plane_size(), 0.0);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      double acc = 0.0;
      for (int coil = 0; coil < img.coils; ++coil) {
        const Cplx z = img.at(coil, r, c);
        acc += z.real() * z.real() + z.imag() * z.imag();
      }
      out[static_cast<size_t>(r) * img.width + c] = acc;
    }
  }
  return out;
}

inline double psnr_scalar(const std::vector<double>& x, const std::vector<double>& ref) {
  double peak = 0.0;
  for (double v : ref) peak = std::max(peak, std::abs(v));
  double sq = 0.0;
  for (size_t i = 0; i < x.size(); ++i) sq += (x[i] - ref[i]) * (x[i] - ref[i]);
  const double rmse = std::sqrt(sq / static_cast<double>(x.size()));
  return 20.0 * std::log10(peak / rmse);
}

inline double ssim_scalar(const std::vector<double>& x, const std::vector<double>& ref) {
  const double n = static_cast<double>(x.size());
  double peak = 0.0;
  for (double v : ref) peak = std::max(peak, std::abs(v));
  double mx = 0, mr = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    mr += ref[i];
  }
  mx /= n;
  mr /= n;
  double vx = 0, vr = 0, cov = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vr += (ref[i] - mr) * (ref[i] - mr);
    cov += (x[i] - mx) * (ref[i] - mr);
  }
  vx /= n;
  vr /= n;
  cov /= n;
  const double c1 = 0.01 * peak * 0.01 * peak;
  const double c2 = 0.03 * peak * 0.03 * peak;
  return ((2 * mx * mr + c1) * (2 * cov + c2)) / ((mx * mx + mr * mr + c1) * (vx + vr + c2));
}

// ---------------------------------------------------------------------------
// small dense linear algebra oracles (real)
// ---------------------------------------------------------------------------

/// Determinant by cofactor expansion along the first row.
inline double det_cofactor(const std::vector<double>& m, int n) {
  if (n == 1) return m[0];
  double acc = 0.0;
  for (int j = 0; j < n; ++j) {
    std::vector<double> minor;
    minor.reserve(static_cast<size_t>(n - 1) * (n - 1));
    for (int r = 1; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        if (c == j) continue;
        minor.push_back(m[static_cast<size_t>(r) * n + c]);
      }
    }
    const double sign = (j % 2 == 0) ? 1.0 : -1.0;
    acc += sign * m[j] * det_cofactor(minor, n - 1);
  }
  return acc;
}

/// Dense inverse via the adjugate (small n only).
inline std::vector<double> inverse_adjugate(const std::vector<double>& m, int n) {
  const double det = det_cofactor(m, n);
  std::vector<double> inv(static_cast<size_t>(n) * n);
  if (n == 1) {
    inv[0] = 1.0 / m[0];
    return inv;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      std::vector<double> minor;
      for (int r = 0; r < n; ++r) {
        if (r == i) continue;
        for (int c = 0; c < n; ++c) {
          if (c == j) continue;
          minor.push_back(m[static_cast<size_t>(r) * n + c]);
        }
      }
      const double sign = ((i + j) % 2 == 0) ? 1.0 : -1.0;
      inv[static_cast<size_t>(j) * n + i] = sign * det_cofactor(minor, n - 1) / det;
    }
  }
  return inv;
}

// ---------------------------------------------------------------------------
// complex SVD oracle: one-sided Jacobi on the columns of A^H
// ---------------------------------------------------------------------------

/// Singular values (descending) of a rows x cols complex matrix given
/// row-major. Independent of any SVD library.
inline std::vector<double> singular_values_jacobi(const std::vector<Cplx>& a, int rows,
                                                  int cols) {
  // work on the rows-as-columns layout: n = rows vectors of length m = cols
  const int n = rows;
  const size_t m = static_cast<size_t>(cols);
  std::vector<std::vector<Cplx>> col(n, std::vector<Cplx>(m));
  for (int i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) col[i][j] = std::conj(a[static_cast<size_t>(i) * m + j]);

  auto dot = [&](int p, int q) {  // <col_p, col_q>
    Cplx acc = 0.0;
    for (size_t k = 0; k < m; ++k) acc += std::conj(col[p][k]) * col[q][k];
    return acc;
  };

  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double app = dot(p, p).real();
        const double aqq = dot(q, q).real();
        const Cplx apq = dot(p, q);
        if (std::abs(apq) <= 1e-15 * std::sqrt(app * aqq) || std::abs(apq) < 1e-300) continue;
        off += std::abs(apq);
        // complex Jacobi rotation zeroing <p,q>
        const double tau = (aqq - app) / (2.0 * std::abs(apq));
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const Cplx s = (apq / std::abs(apq)) * (t * c);
        for (size_t k = 0; k < m; ++k) {
          const Cplx vp = col[p][k], vq = col[q][k];
          col[p][k] = c * vp - std::conj(s) * vq;
          col[q][k] = s * vp + c * vq;
        }
      }
    }
    if (off == 0.0) break;
  }

  std::vector<double> sv(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (size_t k = 0; k < m; ++k) acc += std::norm(col[i][k]);
    sv[i] = std::sqrt(acc);
  }
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

/// Trailing energy sum_{i >= keep} sigma_i^2.
inline double trailing_energy(const std::vector<double>& sv, int keep) {
  double acc = 0.0;
  for (size_t i = keep; i < sv.size(); ++i) acc += sv[i] * sv[i];
  return acc;
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

inline bool point_in_ellipse(double x, double y, double cx, double cy, double ax, double ay,
                             double angle_deg) {
  const double t = angle_deg * M_PI / 180.0;
  const double dx = x - cx, dy = y - cy;
  const double u = (std::cos(t) * dx + std::sin(t) * dy) / ax;
  const double v = (-std::sin(t) * dx + std::cos(t) * dy) / ay;
  return u * u + v * v <= 1.0;
}

// ---------------------------------------------------------------------------
// random data helpers
// ---------------------------------------------------------------------------

inline vicc::ComplexImage random_image(int coils, int h, int w, vicc::Domain domain,
                                       vicc::Rng& rng, double scale = 1.0) {
  vicc::ComplexImage img(coils, h, w, domain);
  for (auto& z : img.data) z = scale * rng.cnormal();
  return img;
}

inline vicc::Tensor random_tensor(int ch, int h, int w, vicc::Rng& rng, double scale = 1.0) {
  vicc::Tensor t(ch, h, w);
  for (double& v : t.v) v = scale * rng.normal();
  return t;
}

}  // namespace oracle
