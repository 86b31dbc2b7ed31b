#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <vector>

#include "oracles.hpp"
#include "vicc/compression.hpp"
#include "vicc/errors.hpp"
#include "vicc/fft.hpp"
#include "vicc/phantom.hpp"

using namespace vicc;
using Cplx = std::complex<double>;

namespace {

/// Row-orthonormal random n x c matrix via modified Gram-Schmidt.
std::vector<Cplx> random_row_orthonormal(int n, int c, Rng& rng) {
  std::vector<std::vector<Cplx>> rows(n, std::vector<Cplx>(c));
  for (auto& row : rows)
    for (auto& z : row) z = rng.cnormal();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      Cplx proj = 0.0;
      for (int k = 0; k < c; ++k) proj += std::conj(rows[j][k]) * rows[i][k];
      for (int k = 0; k < c; ++k) rows[i][k] -= proj * rows[j][k];
    }
    double nrm = 0.0;
    for (int k = 0; k < c; ++k) nrm += std::norm(rows[i][k]);
    nrm = std::sqrt(nrm);
    for (int k = 0; k < c; ++k) rows[i][k] /= nrm;
  }
  std::vector<Cplx> flat;
  for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  return flat;
}

std::vector<Cplx> coil_samples(const ComplexImage& ksp) {
  // rows = coils, columns = samples (row-major)
  std::vector<Cplx> m(ksp.size());
  for (int c = 0; c < ksp.coils; ++c)
    for (size_t i = 0; i < ksp.plane_size(); ++i)
      m[static_cast<size_t>(c) * ksp.plane_size() + i] = ksp.coil(c)[i];
  return m;
}

double check_rows_orthonormal(const CompressionMatrix& a) {
  double worst = 0.0;
  for (const auto& mat : a.per_location) {
    for (int i = 0; i < a.n_virtual; ++i) {
      for (int j = 0; j < a.n_virtual; ++j) {
        Cplx acc = 0.0;
        for (int k = 0; k < a.n_physical; ++k)
          acc += mat[static_cast<size_t>(i) * a.n_physical + k] *
                 std::conj(mat[static_cast<size_t>(j) * a.n_physical + k]);
        const double want = i == j ? 1.0 : 0.0;
        worst = std::max(worst, std::abs(acc - want));
      }
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("scc: linearly dependent trailing coils compress losslessly") {
  Rng rng(10);
  const int n = 2;
  ComplexImage ksp(5, 8, 8, Domain::KSpace);
  for (int c = 0; c < n; ++c)
    for (size_t i = 0; i < ksp.plane_size(); ++i) ksp.coil(c)[i] = rng.cnormal();
  for (int c = n; c < 5; ++c) {
    const Cplx w0 = rng.cnormal(), w1 = rng.cnormal();
    for (size_t i = 0; i < ksp.plane_size(); ++i)
      ksp.coil(c)[i] = w0 * ksp.coil(0)[i] + w1 * ksp.coil(1)[i];
  }
  const CompressionMatrix a = scc_fit(ksp, n);
  const double total = l2_norm(ksp) * l2_norm(ksp);
  CHECK(compression_error(ksp, a) / total <= 1e-10);
}

TEST_CASE("scc error equals the trailing singular energy of the Jacobi oracle") {
  Rng rng(11);
  const ComplexImage ksp = oracle::random_image(4, 8, 8, Domain::KSpace, rng);
  const CompressionMatrix a = scc_fit(ksp, 2);
  const auto sv = oracle::singular_values_jacobi(coil_samples(ksp), 4,
                                                 static_cast<int>(ksp.plane_size()));
  const double want = oracle::trailing_energy(sv, 2);
  CHECK(oracle::rel_err(compression_error(ksp, a), want) <= 1e-8);
}

TEST_CASE("scc with n_virtual == coils is exact and unitary") {
  Rng rng(12);
  const ComplexImage ksp = oracle::random_image(4, 6, 6, Domain::KSpace, rng);
  const CompressionMatrix a = scc_fit(ksp, 4);
  const double total = l2_norm(ksp) * l2_norm(ksp);
  CHECK(compression_error(ksp, a) / total <= 1e-10);
  // A^H A == I_C: check through the round trip of unit vectors
  ComplexImage probe(4, 1, 1, Domain::KSpace);
  for (int basis = 0; basis < 4; ++basis) {
    for (int c = 0; c < 4; ++c) probe.coil(c)[0] = c == basis ? 1.0 : 0.0;
    const ComplexImage out = decompress_apply(compress_apply(probe, a), a);
    for (int c = 0; c < 4; ++c) {
      const Cplx want = c == basis ? 1.0 : 0.0;
      CHECK(std::abs(out.coil(c)[0] - want) <= 1e-10);
    }
  }
}

TEST_CASE("fitted matrices have orthonormal rows (scc and gcc)") {
  Rng rng(13);
  const ComplexImage ksp = oracle::random_image(6, 10, 12, Domain::KSpace, rng);
  CHECK(check_rows_orthonormal(scc_fit(ksp, 3)) <= 1e-8);
  CHECK(check_rows_orthonormal(gcc_fit(ksp, 3)) <= 1e-8);
}

TEST_CASE("scc is optimal against 100 random row-orthonormal competitors") {
  Rng rng(14);
  const PhantomSpec spec = default_phantom_spec(16, 16, 6, 99);
  const ComplexImage ksp = fft2c(make_phantom(spec));
  const CompressionMatrix a = scc_fit(ksp, 3);
  const double best = compression_error(ksp, a);
  for (int trial = 0; trial < 100; ++trial) {
    CompressionMatrix b;
    b.mode = CompressionMode::SCC;
    b.n_virtual = 3;
    b.n_physical = 6;
    b.per_location.push_back(random_row_orthonormal(3, 6, rng));
    CHECK(best <= compression_error(ksp, b) + 1e-9);
  }
}

TEST_CASE("gcc degenerates to the scc subspace when data is constant along readout") {
  Rng rng(15);
  ComplexImage ksp(4, 8, 6, Domain::KSpace);
  for (int c = 0; c < 4; ++c)
    for (int col = 0; col < 6; ++col) {
      const Cplx v = rng.cnormal();
      for (int r = 0; r < 8; ++r) ksp.at(c, r, col) = v;
    }
  const CompressionMatrix gcc = gcc_fit(ksp, 2);
  const CompressionMatrix scc = scc_fit(ksp, 2);
  // principal angles between row spaces: singular values of A1 * A2^H
  for (const auto& mat : gcc.per_location) {
    std::vector<Cplx> cross(4);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        Cplx acc = 0.0;
        for (int k = 0; k < 4; ++k)
          acc += mat[static_cast<size_t>(i) * 4 + k] *
                 std::conj(scc.per_location[0][static_cast<size_t>(j) * 4 + k]);
        cross[static_cast<size_t>(i) * 2 + j] = acc;
      }
    const auto sv = oracle::singular_values_jacobi(cross, 2, 2);
    CHECK(1.0 - sv.back() <= 1e-12);  // cos(angle) == 1 within 1e-6 angle
  }
}

TEST_CASE("gcc per-location error matches the per-location Jacobi oracle") {
  Rng rng(16);
  const ComplexImage ksp = oracle::random_image(4, 6, 10, Domain::KSpace, rng);
  const CompressionMatrix gcc = gcc_fit(ksp, 2);
  const ComplexImage hybrid = fft1c_readout(ksp, true);
  for (int r = 0; r < ksp.height; ++r) {
    // residual of (A^H A - I) per column at this readout location
    const auto& mat = gcc.per_location[r];
    double got = 0.0;
    for (int col = 0; col < ksp.width; ++col) {
      std::vector<Cplx> x(4), proj(4, 0.0);
      for (int c = 0; c < 4; ++c) x[c] = hybrid.at(c, r, col);
      std::vector<Cplx> y(2, 0.0);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) y[i] += mat[static_cast<size_t>(i) * 4 + j] * x[j];
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 2; ++i) proj[j] += std::conj(mat[static_cast<size_t>(i) * 4 + j]) * y[i];
      for (int j = 0; j < 4; ++j) got += std::norm(proj[j] - x[j]);
    }
    std::vector<Cplx> loc(static_cast<size_t>(4) * 10);
    for (int c = 0; c < 4; ++c)
      for (int col = 0; col < 10; ++col) loc[static_cast<size_t>(c) * 10 + col] = hybrid.at(c, r, col);
    const double want = oracle::trailing_energy(oracle::singular_values_jacobi(loc, 4, 10), 2);
    CHECK(std::abs(got - want) / std::max(want, 1e-12) <= 1e-8);
  }
}

TEST_CASE("gcc total error never exceeds scc on random phantoms") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const PhantomSpec spec = default_phantom_spec(24, 24, 6, seed);
    const ComplexImage ksp = fft2c(make_phantom(spec));
    const double scc_err = compression_error(ksp, scc_fit(ksp, 3));
    const double gcc_err = compression_error(ksp, gcc_fit(ksp, 3));
    CHECK(gcc_err <= scc_err * (1.0 + 1e-12) + 1e-12);
  }
}

TEST_CASE("identity matrix compresses and decompresses as the identity") {
  CompressionMatrix eye;
  eye.mode = CompressionMode::SCC;
  eye.n_virtual = 3;
  eye.n_physical = 3;
  eye.per_location.emplace_back(9, Cplx{0.0});
  for (int i = 0; i < 3; ++i) eye.per_location[0][static_cast<size_t>(i) * 3 + i] = 1.0;
  Rng rng(17);
  const ComplexImage x = oracle::random_image(3, 5, 5, Domain::KSpace, rng);
  const ComplexImage y = compress_apply(x, eye);
  const ComplexImage z = decompress_apply(y, eye);
  for (size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(y.data[i] - x.data[i]) <= 1e-15);
    CHECK(std::abs(z.data[i] - x.data[i]) <= 1e-15);
  }
}

TEST_CASE("decompress(compress(x)) equals the scalar A^H A x oracle") {
  Rng rng(18);
  const ComplexImage x = oracle::random_image(4, 4, 5, Domain::KSpace, rng);
  const CompressionMatrix a = scc_fit(x, 2);
  const ComplexImage rec = decompress_apply(compress_apply(x, a), a);
  const auto& mat = a.per_location[0];
  for (int r = 0; r < x.height; ++r) {
    for (int col = 0; col < x.width; ++col) {
      std::vector<Cplx> vx(4), vy(2, 0.0), vrec(4, 0.0);
      for (int c = 0; c < 4; ++c) vx[c] = x.at(c, r, col);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) vy[i] += mat[static_cast<size_t>(i) * 4 + j] * vx[j];
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 2; ++i) vrec[j] += std::conj(mat[static_cast<size_t>(i) * 4 + j]) * vy[i];
      for (int c = 0; c < 4; ++c) CHECK(std::abs(rec.at(c, r, col) - vrec[c]) <= 1e-12);
    }
  }
}

TEST_CASE("row-orthonormal compression is non-expansive and linear") {
  Rng rng(19);
  const ComplexImage x = oracle::random_image(5, 6, 6, Domain::KSpace, rng);
  const ComplexImage z = oracle::random_image(5, 6, 6, Domain::KSpace, rng);
  const CompressionMatrix a = scc_fit(x, 2);
  CHECK(l2_norm(compress_apply(x, a)) <= l2_norm(x) * (1.0 + 1e-12));
  const Cplx alpha{0.7, -0.3}, beta{-1.1, 0.4};
  ComplexImage mix = x;
  for (size_t i = 0; i < mix.size(); ++i) mix.data[i] = alpha * x.data[i] + beta * z.data[i];
  const ComplexImage lhs = compress_apply(mix, a);
  const ComplexImage cx = compress_apply(x, a);
  const ComplexImage cz = compress_apply(z, a);
  for (size_t i = 0; i < lhs.size(); ++i)
    CHECK(std::abs(lhs.data[i] - (alpha * cx.data[i] + beta * cz.data[i])) <= 1e-10);
}

TEST_CASE("compression_error equals the explicit reconstruction residual") {
  Rng rng(20);
  const ComplexImage x = oracle::random_image(5, 8, 8, Domain::KSpace, rng);
  for (int n : {2, 3, 5}) {
    for (bool gcc : {false, true}) {
      const CompressionMatrix a = gcc ? gcc_fit(x, n) : scc_fit(x, n);
      const ComplexImage rec = decompress_apply(compress_apply(x, a), a);
      double resid = 0.0;
      for (size_t i = 0; i < x.size(); ++i) resid += std::norm(x.data[i] - rec.data[i]);
      const double err = compression_error(x, a);
      CHECK(std::abs(err - resid) / std::max(resid, 1e-12) <= 1e-10);
    }
  }
}

TEST_CASE("ccm files roundtrip byte-for-byte") {
  namespace fs = std::filesystem;
  Rng rng(21);
  const ComplexImage ksp = oracle::random_image(4, 8, 8, Domain::KSpace, rng);
  const CompressionMatrix a = gcc_fit(ksp, 2);
  const fs::path dir = fs::temp_directory_path() / "vicc_ccm_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.ccm").string();
  const std::string p2 = (dir / "b.ccm").string();
  save_ccm(p1, a);
  save_ccm(p2, load_ccm(p1));
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(b1.size() == 17 + a.per_location.size() * 2ull * 4 * 8);
  fs::remove_all(dir);
}

TEST_CASE("fit rejects n_virtual > coils and non-k-space input") {
  Rng rng(22);
  const ComplexImage ksp = oracle::random_image(3, 4, 4, Domain::KSpace, rng);
  CHECK_THROWS_AS(scc_fit(ksp, 4), Error);
  const ComplexImage img = oracle::random_image(3, 4, 4, Domain::Image, rng);
  CHECK_THROWS_AS(scc_fit(img, 2), Error);
  CHECK_THROWS_AS(gcc_fit(img, 2), Error);
}
