#include "vicc/compression.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "vicc/errors.hpp"
#include "vicc/fft.hpp"

namespace vicc {
namespace {

using Cplx = std::complex<double>;
using MatC = Eigen::MatrixXcd;

/// Top-N left singular vectors, conjugate-transposed into an N x C map.
std::vector<Cplx> fit_matrix(const MatC& samples, int n_virtual) {
  Eigen::JacobiSVD<MatC> svd(samples, Eigen::ComputeThinU);
  const int c = static_cast<int>(samples.rows());
  std::vector<Cplx> a(static_cast<size_t>(n_virtual) * c);
  for (int i = 0; i < n_virtual; ++i)
    for (int j = 0; j < c; ++j) a[static_cast<size_t>(i) * c + j] = std::conj(svd.matrixU()(j, i));
  return a;
}

MatC to_eigen(const std::vector<Cplx>& a, int rows, int cols) {
  MatC m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = a[static_cast<size_t>(i) * cols + j];
  return m;
}

std::vector<Cplx> from_eigen(const MatC& m) {
  std::vector<Cplx> a(static_cast<size_t>(m.rows()) * m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) a[static_cast<size_t>(i) * m.cols() + j] = m(i, j);
  return a;
}

/// Columns of the coil-sample matrix for the requested k-space columns.
MatC coil_sample_matrix(const ComplexImage& ksp, const std::vector<int>& cols) {
  const size_t per_col = static_cast<size_t>(ksp.height);
  const size_t n_samples = cols.empty() ? ksp.plane_size() : cols.size() * per_col;
  MatC m(ksp.coils, static_cast<Eigen::Index>(n_samples));
  if (cols.empty()) {
    for (int c = 0; c < ksp.coils; ++c) {
      const Cplx* p = ksp.coil(c);
      for (size_t i = 0; i < ksp.plane_size(); ++i) m(c, static_cast<Eigen::Index>(i)) = p[i];
    }
  } else {
    for (int c = 0; c < ksp.coils; ++c) {
      size_t k = 0;
      for (int col : cols) {
        if (col < 0 || col >= ksp.width) throw_contract("calibration column out of range");
        for (int r = 0; r < ksp.height; ++r)
          m(c, static_cast<Eigen::Index>(k++)) = ksp.at(c, r, col);
      }
    }
  }
  return m;
}

void check_fit_args(const ComplexImage& ksp, int n_virtual) {
  ksp.check();
  if (ksp.domain != Domain::KSpace) throw_contract("coil compression fits on k-space input");
  if (n_virtual < 1 || n_virtual > ksp.coils)
    throw_contract("n_virtual must be in [1, coils]");
}

/// Unitary Q minimizing ||Q*A - Ref||_F over the rotation group.
MatC procrustes_rotation(const MatC& a, const MatC& ref) {
  const MatC m = a * ref.adjoint();
  Eigen::JacobiSVD<MatC> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixV() * svd.matrixU().adjoint();
}

double location_energy(const ComplexImage& hybrid, int row) {
  double e = 0.0;
  for (int c = 0; c < hybrid.coils; ++c)
    for (int col = 0; col < hybrid.width; ++col) e += std::norm(hybrid.at(c, row, col));
  return e;
}

MatC location_matrix(const ComplexImage& hybrid, int row, const std::vector<int>& cols) {
  const int nc = cols.empty() ? hybrid.width : static_cast<int>(cols.size());
  MatC m(hybrid.coils, nc);
  for (int c = 0; c < hybrid.coils; ++c) {
    if (cols.empty()) {
      for (int col = 0; col < hybrid.width; ++col) m(c, col) = hybrid.at(c, row, col);
    } else {
      for (int k = 0; k < nc; ++k) m(c, k) = hybrid.at(c, row, cols[k]);
    }
  }
  return m;
}

}  // namespace

CompressionMatrix scc_fit(const ComplexImage& ksp, int n_virtual,
                          const std::vector<int>& calib_cols) {
  check_fit_args(ksp, n_virtual);
  CompressionMatrix out;
  out.mode = CompressionMode::SCC;
  out.n_virtual = n_virtual;
  out.n_physical = ksp.coils;
  out.per_location.push_back(fit_matrix(coil_sample_matrix(ksp, calib_cols), n_virtual));
  return out;
}

CompressionMatrix gcc_fit(const ComplexImage& ksp, int n_virtual,
                          const std::vector<int>& calib_cols) {
  check_fit_args(ksp, n_virtual);
  const ComplexImage hybrid = fft1c_readout(ksp, /*inverse=*/true);
  const int h = ksp.height;

  std::vector<double> energy(h);
  double max_energy = 0.0;
  for (int r = 0; r < h; ++r) {
    energy[r] = location_energy(hybrid, r);
    max_energy = std::max(max_energy, energy[r]);
  }
  const double degenerate = max_energy * 1e-24;

  CompressionMatrix out;
  out.mode = CompressionMode::GCC;
  out.n_virtual = n_virtual;
  out.n_physical = ksp.coils;
  out.per_location.assign(h, {});

  std::vector<MatC> fitted(h);
  for (int r = 0; r < h; ++r) {
    if (energy[r] > degenerate)
      fitted[r] = to_eigen(fit_matrix(location_matrix(hybrid, r, calib_cols), n_virtual),
                           n_virtual, ksp.coils);
  }

  const int center = h / 2;
  if (fitted[center].size() == 0) {
    // Nothing at the center row: seed the sweep with the global fit.
    fitted[center] = to_eigen(fit_matrix(coil_sample_matrix(hybrid, calib_cols), n_virtual),
                              n_virtual, ksp.coils);
  }
  out.per_location[center] = from_eigen(fitted[center]);

  auto sweep = [&](int from, int to, int step) {
    MatC prev = fitted[center];
    for (int r = from; r != to; r += step) {
      MatC cur;
      if (fitted[r].size() == 0) {
        cur = prev;  // empty location: carry the neighbor forward
      } else {
        cur = procrustes_rotation(fitted[r], prev) * fitted[r];
      }
      out.per_location[r] = from_eigen(cur);
      prev = cur;
    }
  };
  sweep(center + 1, h, 1);
  sweep(center - 1, -1, -1);
  return out;
}

namespace {

ComplexImage apply_pointwise(const ComplexImage& x, const CompressionMatrix& A, bool adjoint) {
  const int in_coils = adjoint ? A.n_virtual : A.n_physical;
  const int out_coils = adjoint ? A.n_physical : A.n_virtual;
  if (x.coils != in_coils) throw_contract("compression apply: coil count mismatch");

  ComplexImage work = x;
  if (A.mode == CompressionMode::GCC) {
    if (x.domain != Domain::KSpace) throw_contract("GCC apply expects k-space input");
    if (static_cast<int>(A.per_location.size()) != x.height)
      throw_contract("GCC apply: per-location count does not match height");
    work = fft1c_readout(x, /*inverse=*/true);
  }

  ComplexImage out(out_coils, x.height, x.width, x.domain);
  std::vector<Cplx> vec_in(in_coils), vec_out(out_coils);
  for (int r = 0; r < x.height; ++r) {
    const std::vector<Cplx>& a =
        A.mode == CompressionMode::SCC ? A.per_location[0] : A.per_location[r];
    for (int col = 0; col < x.width; ++col) {
      for (int c = 0; c < in_coils; ++c) vec_in[c] = work.at(c, r, col);
      for (int i = 0; i < out_coils; ++i) {
        Cplx acc = 0.0;
        if (!adjoint) {
          for (int j = 0; j < in_coils; ++j)
            acc += a[static_cast<size_t>(i) * A.n_physical + j] * vec_in[j];
        } else {
          for (int j = 0; j < in_coils; ++j)
            acc += std::conj(a[static_cast<size_t>(j) * A.n_physical + i]) * vec_in[j];
        }
        vec_out[i] = acc;
      }
      for (int i = 0; i < out_coils; ++i) out.at(i, r, col) = vec_out[i];
    }
  }

  if (A.mode == CompressionMode::GCC) return fft1c_readout(out, /*inverse=*/false);
  return out;
}

}  // namespace

ComplexImage compress_apply(const ComplexImage& x, const CompressionMatrix& A) {
  return apply_pointwise(x, A, /*adjoint=*/false);
}

ComplexImage decompress_apply(const ComplexImage& y, const CompressionMatrix& A) {
  return apply_pointwise(y, A, /*adjoint=*/true);
}

double compression_error(const ComplexImage& x, const CompressionMatrix& A) {
  if (x.coils != A.n_physical) throw_contract("compression_error: coil count mismatch");
  // sum_k ||(A^H A - I) x(k)||^2, evaluated per sample; GCC in the hybrid
  // domain where its matrices live (the readout transform is unitary).
  ComplexImage work = x;
  if (A.mode == CompressionMode::GCC) {
    if (x.domain != Domain::KSpace) throw_contract("GCC compression_error expects k-space input");
    work = fft1c_readout(x, /*inverse=*/true);
  }
  const int nc = A.n_physical;
  std::vector<MatC> residual_ops;
  for (const auto& mat : A.per_location) {
    const MatC a = to_eigen(mat, A.n_virtual, nc);
    residual_ops.push_back(a.adjoint() * a - MatC::Identity(nc, nc));
  }
  double acc = 0.0;
  Eigen::VectorXcd v(nc);
  for (int r = 0; r < work.height; ++r) {
    const MatC& op = A.mode == CompressionMode::SCC ? residual_ops[0] : residual_ops[r];
    for (int col = 0; col < work.width; ++col) {
      for (int c = 0; c < nc; ++c) v(c) = work.at(c, r, col);
      acc += (op * v).squaredNorm();
    }
  }
  return acc;
}

std::vector<int> detect_acs_columns(const ComplexImage& ksp) {
  ksp.check();
  std::vector<char> nonzero(ksp.width, 0);
  for (int c = 0; c < ksp.coils; ++c) {
    for (int r = 0; r < ksp.height; ++r) {
      for (int col = 0; col < ksp.width; ++col) {
        if (std::norm(ksp.at(c, r, col)) > 0.0) nonzero[col] = 1;
      }
    }
  }
  const int center = ksp.width / 2;
  std::vector<int> cols;
  if (!nonzero[center]) return cols;
  int lo = center, hi = center;
  while (lo > 0 && nonzero[lo - 1]) --lo;
  while (hi + 1 < ksp.width && nonzero[hi + 1]) ++hi;
  for (int c = lo; c <= hi; ++c) cols.push_back(c);
  return cols;
}

namespace {

constexpr char kCcmMagic[4] = {'C', 'C', 'M', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(const unsigned char* b) {
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_ccm(const std::string& path, const CompressionMatrix& A) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_format("save_ccm: cannot open " + path, FormatCode::None);
  os.write(kCcmMagic, 4);
  const unsigned char mode = A.mode == CompressionMode::SCC ? 0 : 1;
  os.write(reinterpret_cast<const char*>(&mode), 1);
  put_u32(os, static_cast<uint32_t>(A.n_virtual));
  put_u32(os, static_cast<uint32_t>(A.n_physical));
  put_u32(os, static_cast<uint32_t>(A.per_location.size()));
  for (const auto& mat : A.per_location) {
    std::vector<float> payload(mat.size() * 2);
    for (size_t i = 0; i < mat.size(); ++i) {
      payload[2 * i] = static_cast<float>(mat[i].real());
      payload[2 * i + 1] = static_cast<float>(mat[i].imag());
    }
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  if (!os) throw_format("save_ccm: write failed for " + path, FormatCode::None);
}

CompressionMatrix load_ccm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_format("load_ccm: cannot open " + path, FormatCode::None);
  unsigned char header[17];
  is.read(reinterpret_cast<char*>(header), 17);
  if (is.gcount() != 17) throw_format("load_ccm: truncated header", FormatCode::Truncated);
  if (std::memcmp(header, kCcmMagic, 4) != 0)
    throw_format("load_ccm: bad magic in " + path, FormatCode::BadMagic);
  CompressionMatrix A;
  A.mode = header[4] == 0 ? CompressionMode::SCC : CompressionMode::GCC;
  A.n_virtual = static_cast<int>(get_u32(header + 5));
  A.n_physical = static_cast<int>(get_u32(header + 9));
  const uint32_t locations = get_u32(header + 13);
  if (A.n_virtual < 1 || A.n_physical < 1 || A.n_virtual > A.n_physical ||
      locations < 1 || locations > (1u << 20) ||
      static_cast<uint64_t>(A.n_virtual) * A.n_physical > (1ull << 24))
    throw_format("load_ccm: unreasonable dimensions", FormatCode::DimOverflow);
  const size_t per_mat = static_cast<size_t>(A.n_virtual) * A.n_physical;
  for (uint32_t l = 0; l < locations; ++l) {
    std::vector<float> payload(per_mat * 2);
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(float)))
      throw_format("load_ccm: truncated payload", FormatCode::Truncated);
    std::vector<Cplx> mat(per_mat);
    for (size_t i = 0; i < per_mat; ++i)
      mat[i] = {static_cast<double>(payload[2 * i]), static_cast<double>(payload[2 * i + 1])};
    A.per_location.push_back(std::move(mat));
  }
  return A;
}

}  // namespace vicc
