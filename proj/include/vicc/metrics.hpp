#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vicc/image.hpp"

namespace vicc {

/// 20*log10(max(ref) / rmse). Identical inputs give +infinity.
double psnr(const RealImage& x, const RealImage& ref);

/// Whole-image SSIM with c1 = (0.01 L)^2, c2 = (0.03 L)^2, L = max(ref).
double ssim(const RealImage& x, const RealImage& ref);

/// 11x11 Gaussian-windowed (sigma 1.5) SSIM map, mean pooled.
double ssim_windowed(const RealImage& x, const RealImage& ref);

struct MetricRow {
  std::string method;
  int n_virtual = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  /// header method,n_virtual,psnr_db,ssim; 6 decimals; "inf" for identical.
  std::string to_csv() const;
};

/// sos both sides (via ifft2c when the inputs are k-space), scale both by
/// 1/max(sos(reference)), then report psnr and ssim per candidate.
MetricReport evaluate(const ComplexImage& reference,
                      const std::vector<std::pair<std::string, ComplexImage>>& candidates);

}  // namespace vicc
