#pragma once

#include <complex>
#include <string>
#include <vector>

#include "vicc/image.hpp"

namespace vicc {

enum class CompressionMode { SCC, GCC };

/// The linear coil-compression map. SCC keeps one n_virtual x n_physical
/// matrix for all samples; GCC keeps one per readout location, applied in
/// the hybrid (readout-imaged) domain. Every matrix has orthonormal rows.
struct CompressionMatrix {
  CompressionMode mode = CompressionMode::SCC;
  int n_virtual = 0;
  int n_physical = 0;
  // length 1 for SCC, height for GCC; each row-major n_virtual*n_physical
  std::vector<std::vector<std::complex<double>>> per_location;
};

/// Global PCA compression: top left singular vectors of the coil-sample
/// matrix. calib_cols restricts the fit to the given k-space columns
/// (empty = all columns).
CompressionMatrix scc_fit(const ComplexImage& ksp, int n_virtual,
                          const std::vector<int>& calib_cols = {});

/// Per-readout-location PCA in the hybrid domain, aligned from the center
/// row outward by orthogonal Procrustes rotations.
CompressionMatrix gcc_fit(const ComplexImage& ksp, int n_virtual,
                          const std::vector<int>& calib_cols = {});

ComplexImage compress_apply(const ComplexImage& x, const CompressionMatrix& A);
ComplexImage decompress_apply(const ComplexImage& y, const CompressionMatrix& A);

/// Total squared residual of compress-then-decompress.
double compression_error(const ComplexImage& x, const CompressionMatrix& A);

/// Columns of the maximal contiguous nonzero block around the k-space
/// center; the whole width when fully sampled.
std::vector<int> detect_acs_columns(const ComplexImage& ksp);

/// CCM container: magic "CCM1", mode byte, then n_virtual, n_physical,
/// location count as little-endian u32, then matrices row-major as
/// little-endian binary32 (real, imag) pairs.
void save_ccm(const std::string& path, const CompressionMatrix& A);
CompressionMatrix load_ccm(const std::string& path);

}  // namespace vicc
