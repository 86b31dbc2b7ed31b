#include "vicc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "vicc/errors.hpp"
#include "vicc/fft.hpp"

namespace vicc {

namespace {

void check_shapes(const RealImage& x, const RealImage& ref, const char* who) {
  if (x.height != ref.height || x.width != ref.width)
    throw_contract(std::string(who) + ": shape mismatch");
}

constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;

}  // namespace

double psnr(const RealImage& x, const RealImage& ref) {
  check_shapes(x, ref, "psnr");
  double peak = 0.0;
  for (double v : ref.data) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) throw_contract("psnr: all-zero reference");
  double sq = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x.data[i] - ref.data[i];
    sq += d * d;
  }
  if (sq == 0.0) return std::numeric_limits<double>::infinity();
  const double rmse = std::sqrt(sq / static_cast<double>(x.size()));
  return 20.0 * std::log10(peak / rmse);
}

double ssim(const RealImage& x, const RealImage& ref) {
  check_shapes(x, ref, "ssim");
  const double n = static_cast<double>(x.size());
  double peak = 0.0;
  for (double v : ref.data) peak = std::max(peak, std::abs(v));
  double mx = 0.0, mr = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x.data[i];
    mr += ref.data[i];
  }
  mx /= n;
  mr /= n;
  double vx = 0.0, vr = 0.0, cov = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x.data[i] - mx;
    const double dr = ref.data[i] - mr;
    vx += dx * dx;
    vr += dr * dr;
    cov += dx * dr;
  }
  vx /= n;
  vr /= n;
  cov /= n;
  const double c1 = kSsimK1 * peak * kSsimK1 * peak;
  const double c2 = kSsimK2 * peak * kSsimK2 * peak;
  return ((2.0 * mx * mr + c1) * (2.0 * cov + c2)) /
         ((mx * mx + mr * mr + c1) * (vx + vr + c2));
}

double ssim_windowed(const RealImage& x, const RealImage& ref) {
  check_shapes(x, ref, "ssim_windowed");
  constexpr int kHalf = 5;
  double peak = 0.0;
  for (double v : ref.data) peak = std::max(peak, std::abs(v));
  const double c1 = kSsimK1 * peak * kSsimK1 * peak;
  const double c2 = kSsimK2 * peak * kSsimK2 * peak;

  double kernel[2 * kHalf + 1];
  double ksum = 0.0;
  for (int i = -kHalf; i <= kHalf; ++i) {
    kernel[i + kHalf] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
    ksum += kernel[i + kHalf];
  }
  for (double& k : kernel) k /= ksum;

  double acc = 0.0;
  for (int r = 0; r < x.height; ++r) {
    for (int c = 0; c < x.width; ++c) {
      double wsum = 0.0, mx = 0.0, mr = 0.0, sxx = 0.0, srr = 0.0, sxr = 0.0;
      for (int dy = -kHalf; dy <= kHalf; ++dy) {
        const int rr = r + dy;
        if (rr < 0 || rr >= x.height) continue;
        for (int dx = -kHalf; dx <= kHalf; ++dx) {
          const int cc = c + dx;
          if (cc < 0 || cc >= x.width) continue;
          const double wgt = kernel[dy + kHalf] * kernel[dx + kHalf];
          const double a = x.at(rr, cc), b = ref.at(rr, cc);
          wsum += wgt;
          mx += wgt * a;
          mr += wgt * b;
          sxx += wgt * a * a;
          srr += wgt * b * b;
          sxr += wgt * a * b;
        }
      }
      mx /= wsum;
      mr /= wsum;
      const double vx = sxx / wsum - mx * mx;
      const double vr = srr / wsum - mr * mr;
      const double cov = sxr / wsum - mx * mr;
      acc += ((2.0 * mx * mr + c1) * (2.0 * cov + c2)) /
             ((mx * mx + mr * mr + c1) * (vx + vr + c2));
    }
  }
  return acc / static_cast<double>(x.size());
}

std::string MetricReport::to_csv() const {
  std::string out = "method,n_virtual,psnr_db,ssim\n";
  char buf[256];
  for (const MetricRow& r : rows) {
    if (std::isinf(r.psnr_db)) {
      std::snprintf(buf, sizeof(buf), "%s,%d,inf,%.6f\n", r.method.c_str(), r.n_virtual, r.ssim);
    } else {
      std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f\n", r.method.c_str(), r.n_virtual,
                    r.psnr_db, r.ssim);
    }
    out += buf;
  }
  return out;
}

MetricReport evaluate(const ComplexImage& reference,
                      const std::vector<std::pair<std::string, ComplexImage>>& candidates) {
  const ComplexImage ref_img =
      reference.domain == Domain::KSpace ? ifft2c(reference) : reference;
  RealImage ref_sos = sos(ref_img);
  double peak = 0.0;
  for (double v : ref_sos.data) peak = std::max(peak, v);
  if (peak == 0.0) throw_contract("evaluate: all-zero reference");
  const double scale = 1.0 / peak;
  for (double& v : ref_sos.data) v *= scale;

  MetricReport report;
  for (const auto& [name, cand] : candidates) {
    if (cand.height != reference.height || cand.width != reference.width)
      throw_contract("evaluate: candidate shape mismatch");
    const ComplexImage cand_img = cand.domain == Domain::KSpace ? ifft2c(cand) : cand;
    RealImage cand_sos = sos(cand_img);
    for (double& v : cand_sos.data) v *= scale;
    MetricRow row;
    row.method = name;
    row.n_virtual = cand.coils;
    row.psnr_db = psnr(cand_sos, ref_sos);
    row.ssim = ssim(cand_sos, ref_sos);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace vicc
