#pragma once

#include <complex>
#include <vector>

#include "vicc/tensor.hpp"

namespace vicc {

enum class Domain { Image, KSpace };

/// One multi-coil slice. data is coil-major with row-major (row, col) planes.
/// The domain tag flips on fft2c/ifft2c and nowhere else.
struct ComplexImage {
  int coils = 0, height = 0, width = 0;
  Domain domain = Domain::Image;
  std::vector<std::complex<double>> data;

  ComplexImage() = default;
  ComplexImage(int coils_, int h, int w, Domain d)
      : coils(coils_), height(h), width(w), domain(d),
        data(static_cast<size_t>(coils_) * h * w) {}

  size_t plane_size() const { return static_cast<size_t>(height) * width; }
  size_t size() const { return data.size(); }

  std::complex<double>* coil(int c) { return data.data() + c * plane_size(); }
  const std::complex<double>* coil(int c) const { return data.data() + c * plane_size(); }

  std::complex<double>& at(int c, int r, int col) {
    return data[(static_cast<size_t>(c) * height + r) * width + col];
  }
  std::complex<double> at(int c, int r, int col) const {
    return data[(static_cast<size_t>(c) * height + r) * width + col];
  }

  /// Throws Contract if sizes are inconsistent or degenerate.
  void check() const;
};

struct RealImage {
  int height = 0, width = 0;
  std::vector<double> data;

  RealImage() = default;
  RealImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.0) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
  size_t size() const { return data.size(); }
};

/// Root-sum-of-squares coil combination of an image-domain slice.
RealImage sos(const ComplexImage& img);

/// C complex coils -> 2C real channels, interleaved [re1, im1, ..., reC, imC].
Tensor split_complex(const ComplexImage& img);

/// Inverse of split_complex. Throws on odd channel count.
ComplexImage merge_complex(const Tensor& stack, Domain domain);

double l2_norm(const ComplexImage& img);

}  // namespace vicc
