#pragma once

#include "vicc/image.hpp"

namespace vicc {

/// Centered, orthonormally scaled 2-D DFT applied per coil:
/// fftshift(FFT(ifftshift(x))) / sqrt(H*W). Image -> KSpace.
ComplexImage fft2c(const ComplexImage& img);

/// Exact inverse of fft2c. KSpace -> KSpace would be a contract violation;
/// input must carry the KSpace tag.
ComplexImage ifft2c(const ComplexImage& ksp);

/// Centered orthonormal 1-D transform along the readout (row index) axis
/// of every coil; used for hybrid-domain processing. The domain tag is
/// left unchanged.
ComplexImage fft1c_readout(const ComplexImage& x, bool inverse);

}  // namespace vicc
