#include "vicc/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <vector>

#include "vicc/errors.hpp"

namespace vicc {
namespace {

// FFTW plan creation is not thread safe; execution on private buffers is.
std::mutex plan_mutex;

// fftshift: index i takes its value from (i + ceil(n/2)) mod n, putting DC
// at floor(n/2). ifftshift is the inverse.
inline int shift_fwd(int i, int n) { return (i + (n + 1) / 2) % n; }
inline int shift_inv(int i, int n) { return (i + n / 2) % n; }

void transform_2d(const ComplexImage& in, ComplexImage& out, int sign) {
  const int h = in.height, w = in.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(h) * w);
  std::vector<std::complex<double>> buf_in(in.plane_size());
  std::vector<std::complex<double>> buf_out(in.plane_size());

  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    plan = fftw_plan_dft_2d(h, w,
                            reinterpret_cast<fftw_complex*>(buf_in.data()),
                            reinterpret_cast<fftw_complex*>(buf_out.data()),
                            sign, FFTW_ESTIMATE);
  }

  for (int c = 0; c < in.coils; ++c) {
    const std::complex<double>* src = in.coil(c);
    // ifftshift into the plan buffer
    for (int r = 0; r < h; ++r) {
      int rs = shift_inv(r, h);
      for (int col = 0; col < w; ++col) {
        buf_in[static_cast<size_t>(r) * w + col] = src[static_cast<size_t>(rs) * w + shift_inv(col, w)];
      }
    }
    fftw_execute(plan);
    // fftshift out of the plan buffer, with orthonormal scaling
    std::complex<double>* dst = out.coil(c);
    for (int r = 0; r < h; ++r) {
      int rs = shift_fwd(r, h);
      for (int col = 0; col < w; ++col) {
        dst[static_cast<size_t>(r) * w + col] =
            buf_out[static_cast<size_t>(rs) * w + shift_fwd(col, w)] * scale;
      }
    }
  }

  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    fftw_destroy_plan(plan);
  }
}

}  // namespace

ComplexImage fft2c(const ComplexImage& img) {
  img.check();
  if (img.domain != Domain::Image) throw_contract("fft2c: expected image-domain input");
  ComplexImage out(img.coils, img.height, img.width, Domain::KSpace);
  transform_2d(img, out, FFTW_FORWARD);
  return out;
}

ComplexImage ifft2c(const ComplexImage& ksp) {
  ksp.check();
  if (ksp.domain != Domain::KSpace) throw_contract("ifft2c: expected k-space input");
  ComplexImage out(ksp.coils, ksp.height, ksp.width, Domain::Image);
  transform_2d(ksp, out, FFTW_BACKWARD);
  return out;
}

ComplexImage fft1c_readout(const ComplexImage& x, bool inverse) {
  x.check();
  const int h = x.height, w = x.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));
  ComplexImage out(x.coils, h, w, x.domain);
  std::vector<std::complex<double>> buf_in(h), buf_out(h);

  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    plan = fftw_plan_dft_1d(h,
                            reinterpret_cast<fftw_complex*>(buf_in.data()),
                            reinterpret_cast<fftw_complex*>(buf_out.data()),
                            inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  }

  for (int c = 0; c < x.coils; ++c) {
    const std::complex<double>* src = x.coil(c);
    std::complex<double>* dst = out.coil(c);
    for (int col = 0; col < w; ++col) {
      for (int r = 0; r < h; ++r) buf_in[r] = src[static_cast<size_t>(shift_inv(r, h)) * w + col];
      fftw_execute(plan);
      for (int r = 0; r < h; ++r)
        dst[static_cast<size_t>(r) * w + col] = buf_out[shift_fwd(r, h)] * scale;
    }
  }

  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    fftw_destroy_plan(plan);
  }
  return out;
}

}  // namespace vicc
