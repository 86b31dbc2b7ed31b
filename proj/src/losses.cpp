#include "vicc/losses.hpp"

#include <cmath>

#include "vicc/errors.hpp"
#include "vicc/fft.hpp"

namespace vicc {

double smooth_l1(const double* a, const double* b, size_t n) {
  if (n == 0) throw_contract("smooth_l1: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    const double ad = std::abs(d);
    acc += ad < 1.0 ? 0.5 * d * d : ad - 0.5;
  }
  return acc / static_cast<double>(n);
}

double smooth_l1(const RealImage& a, const RealImage& b) {
  if (a.height != b.height || a.width != b.width) throw_contract("smooth_l1: shape mismatch");
  return smooth_l1(a.data.data(), b.data.data(), a.size());
}

double smooth_l1(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_contract("smooth_l1: shape mismatch");
  return smooth_l1(a.v.data(), b.v.data(), a.size());
}

double loss_forward_image(const ComplexImage& x_hat, const ComplexImage& x_ref) {
  if (x_hat.domain != Domain::Image || x_ref.domain != Domain::Image)
    throw_contract("loss_forward_image: expected image-domain inputs");
  return smooth_l1(sos(x_hat), sos(x_ref));
}

double loss_forward_kspace(const ComplexImage& x_hat_k, const ComplexImage& x_ref_k) {
  if (x_hat_k.domain != Domain::KSpace || x_ref_k.domain != Domain::KSpace)
    throw_contract("loss_forward_kspace: expected k-space inputs");
  return smooth_l1(sos(ifft2c(x_hat_k)), sos(ifft2c(x_ref_k)));
}

double loss_reverse(const ComplexImage& x_rec, const ComplexImage& x) {
  if (x_rec.coils != x.coils || x_rec.height != x.height || x_rec.width != x.width)
    throw_contract("loss_reverse: shape mismatch");
  return smooth_l1(split_complex(x_rec), split_complex(x));
}

}  // namespace vicc
