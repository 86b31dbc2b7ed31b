#include "vicc/image.hpp"

#include <cmath>

#include "vicc/errors.hpp"

namespace vicc {

void ComplexImage::check() const {
  if (coils < 1 || height < 1 || width < 1)
    throw_contract("ComplexImage: coils, height and width must be >= 1");
  if (data.size() != static_cast<size_t>(coils) * height * width)
    throw_contract("ComplexImage: data length does not match coils*height*width");
}

RealImage sos(const ComplexImage& img) {
  img.check();
  if (img.domain != Domain::Image)
    throw_contract("sos: expected image-domain input");
  RealImage out(img.height, img.width);
  for (int c = 0; c < img.coils; ++c) {
    const std::complex<double>* p = img.coil(c);
    for (size_t i = 0; i < out.size(); ++i) {
      out.data[i] += p[i].real() * p[i].real() + p[i].imag() * p[i].imag();
    }
  }
  for (double& v : out.data) v = std::sqrt(v);
  return out;
}

Tensor split_complex(const ComplexImage& img) {
  img.check();
  Tensor out(2 * img.coils, img.height, img.width);
  for (int c = 0; c < img.coils; ++c) {
    const std::complex<double>* p = img.coil(c);
    double* re = out.plane(2 * c);
    double* im = out.plane(2 * c + 1);
    for (size_t i = 0; i < img.plane_size(); ++i) {
      re[i] = p[i].real();
      im[i] = p[i].imag();
    }
  }
  return out;
}

ComplexImage merge_complex(const Tensor& stack, Domain domain) {
  if (stack.ch % 2 != 0)
    throw_contract("merge_complex: channel count must be even");
  ComplexImage out(stack.ch / 2, stack.h, stack.w, domain);
  for (int c = 0; c < out.coils; ++c) {
    const double* re = stack.plane(2 * c);
    const double* im = stack.plane(2 * c + 1);
    std::complex<double>* p = out.coil(c);
    for (size_t i = 0; i < out.plane_size(); ++i) p[i] = {re[i], im[i]};
  }
  return out;
}

double l2_norm(const ComplexImage& img) {
  double acc = 0.0;
  for (const auto& z : img.data) acc += std::norm(z);
  return std::sqrt(acc);
}

}  // namespace vicc
