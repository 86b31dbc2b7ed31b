#pragma once

#include <cstddef>

#include "vicc/image.hpp"

namespace vicc {

/// Mean-reduced smooth L1 on d = a - b: 0.5*d^2 when |d| < 1, |d| - 0.5
/// otherwise. Mean reduction keeps the magnitude resolution-independent.
double smooth_l1(const double* a, const double* b, size_t n);
double smooth_l1(const RealImage& a, const RealImage& b);
double smooth_l1(const Tensor& a, const Tensor& b);

/// d(smooth_l1)/da for one element, before the 1/n reduction factor.
inline double smooth_l1_derivative(double d) {
  if (d > 1.0) return 1.0;
  if (d < -1.0) return -1.0;
  return d;
}

/// Forward-pass loss in the image domain: smooth_l1 of the sos images.
/// Coil counts may differ; sos collapses them.
double loss_forward_image(const ComplexImage& x_hat, const ComplexImage& x_ref);

/// Forward-pass loss in the k-space domain: both sides are inverse
/// transformed before the sos comparison.
double loss_forward_kspace(const ComplexImage& x_hat_k, const ComplexImage& x_ref_k);

/// Reverse-pass loss: elementwise smooth_l1 over the real channel stacks.
double loss_reverse(const ComplexImage& x_rec, const ComplexImage& x);

}  // namespace vicc
