#include "vicc/flow.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "vicc/errors.hpp"
#include "vicc/rng.hpp"

namespace vicc {

// ---------------------------------------------------------------------------
// 3x3 convolution
// ---------------------------------------------------------------------------

namespace {

constexpr double kLeakySlope = 0.2;
constexpr double kMinScaleLog = -27.63102111592855;  // log(1e-12)

void conv3x3_forward(const Conv3x3& conv, const Tensor& x, Tensor& y) {
  const int h = x.h, w = x.w;
  for (int oc = 0; oc < conv.out_ch; ++oc) {
    double* yp = y.plane(oc);
    const double bias = conv.b[oc];
    for (size_t i = 0; i < y.plane_size(); ++i) yp[i] = bias;
    for (int ic = 0; ic < conv.in_ch; ++ic) {
      const double* xp = x.plane(ic);
      const double* wk = conv.w.data() + (static_cast<size_t>(oc) * conv.in_ch + ic) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const double coeff = wk[ky * 3 + kx];
          if (coeff == 0.0) continue;
          const int r0 = std::max(0, -dy), r1 = std::min(h, h - dy);
          const int c0 = std::max(0, -dx), c1 = std::min(w, w - dx);
          for (int r = r0; r < r1; ++r) {
            double* yrow = yp + static_cast<size_t>(r) * w;
            const double* xrow = xp + static_cast<size_t>(r + dy) * w + dx;
            for (int c = c0; c < c1; ++c) yrow[c] += coeff * xrow[c];
          }
        }
      }
    }
  }
}

/// Accumulates input and weight gradients. gx may be null when the input
/// gradient is not needed.
void conv3x3_backward(const Conv3x3& conv, const Tensor& x, const Tensor& gy,
                      Tensor* gx, ConvGrad& grad) {
  const int h = x.h, w = x.w;
  for (int oc = 0; oc < conv.out_ch; ++oc) {
    const double* gyp = gy.plane(oc);
    double bsum = 0.0;
    for (size_t i = 0; i < gy.plane_size(); ++i) bsum += gyp[i];
    grad.b[oc] += bsum;
    for (int ic = 0; ic < conv.in_ch; ++ic) {
      const double* xp = x.plane(ic);
      const double* wk = conv.w.data() + (static_cast<size_t>(oc) * conv.in_ch + ic) * 9;
      double* gwk = grad.w.data() + (static_cast<size_t>(oc) * conv.in_ch + ic) * 9;
      double* gxp = gx ? gx->plane(ic) : nullptr;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const int r0 = std::max(0, -dy), r1 = std::min(h, h - dy);
          const int c0 = std::max(0, -dx), c1 = std::min(w, w - dx);
          double wsum = 0.0;
          const double coeff = wk[ky * 3 + kx];
          for (int r = r0; r < r1; ++r) {
            const double* gyrow = gyp + static_cast<size_t>(r) * w;
            const double* xrow = xp + static_cast<size_t>(r + dy) * w + dx;
            for (int c = c0; c < c1; ++c) wsum += gyrow[c] * xrow[c];
            if (gxp) {
              double* gxrow = gxp + static_cast<size_t>(r + dy) * w + dx;
              for (int c = c0; c < c1; ++c) gxrow[c] += coeff * gyrow[c];
            }
          }
          gwk[ky * 3 + kx] += wsum;
        }
      }
    }
  }
}

Tensor leaky_relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.v) v = v > 0.0 ? v : kLeakySlope * v;
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense subnet
// ---------------------------------------------------------------------------

namespace {

Tensor subnet_forward(const DenseSubnet& net, const Tensor& x, SubnetTrace* trace) {
  Tensor feat = x;
  for (int i = 0; i < 4; ++i) {
    Tensor pre(net.layers[i].out_ch, x.h, x.w);
    conv3x3_forward(net.layers[i], feat, pre);
    if (trace) {
      trace->inputs[i] = feat;
      trace->preact[i] = pre;
    }
    feat = concat_channels(feat, leaky_relu(pre));
  }
  Tensor out(net.layers[4].out_ch, x.h, x.w);
  conv3x3_forward(net.layers[4], feat, out);
  if (trace) trace->inputs[4] = feat;
  return out;
}

Tensor subnet_backward(const DenseSubnet& net, const SubnetTrace& trace,
                       const Tensor& g_out, SubnetGrad& grad) {
  Tensor g_feat(trace.inputs[4].ch, g_out.h, g_out.w);
  conv3x3_backward(net.layers[4], trace.inputs[4], g_out, &g_feat, grad.layers[4]);
  for (int i = 3; i >= 0; --i) {
    const int prev_ch = trace.inputs[i].ch;
    Tensor g_prev = slice_channels(g_feat, 0, prev_ch);
    Tensor g_act = slice_channels(g_feat, prev_ch, net.layers[i].out_ch);
    const Tensor& pre = trace.preact[i];
    for (size_t k = 0; k < g_act.size(); ++k) {
      if (pre.v[k] <= 0.0) g_act.v[k] *= kLeakySlope;
    }
    conv3x3_backward(net.layers[i], trace.inputs[i], g_act, &g_prev, grad.layers[i]);
    g_feat = std::move(g_prev);
  }
  return g_feat;
}

}  // namespace

// ---------------------------------------------------------------------------
// Invertible 1x1 convolution (LU parameterization)
// ---------------------------------------------------------------------------

namespace {

inline size_t lower_index(int i, int j) {  // j < i
  return static_cast<size_t>(i) * (i - 1) / 2 + j;
}
inline size_t upper_index(int i, int j, int c) {  // j > i
  return static_cast<size_t>(i) * (c - 1) - static_cast<size_t>(i) * (i - 1) / 2 + (j - i - 1);
}

/// L unit-lower and M = U + diag(s), both dense row-major c x c.
void build_factors(const InvConv& w, std::vector<double>& L, std::vector<double>& M) {
  const int c = w.channels;
  L.assign(static_cast<size_t>(c) * c, 0.0);
  M.assign(static_cast<size_t>(c) * c, 0.0);
  for (int i = 0; i < c; ++i) {
    L[static_cast<size_t>(i) * c + i] = 1.0;
    for (int j = 0; j < i; ++j) L[static_cast<size_t>(i) * c + j] = w.lower[lower_index(i, j)];
    M[static_cast<size_t>(i) * c + i] = w.sign_s[i] * std::exp(w.log_s[i]);
    for (int j = i + 1; j < c; ++j)
      M[static_cast<size_t>(i) * c + j] = w.upper[upper_index(i, j, c)];
  }
}

std::vector<double> matmul_dense(const std::vector<double>& a, const std::vector<double>& b,
                                 int n) {
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double aik = a[static_cast<size_t>(i) * n + k];
      if (aik == 0.0) continue;
      for (int j = 0; j < n; ++j)
        out[static_cast<size_t>(i) * n + j] += aik * b[static_cast<size_t>(k) * n + j];
    }
  return out;
}

std::vector<int> inverse_perm(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return inv;
}

void check_channels(const Tensor& h, const InvConv& w, const char* who) {
  if (h.ch != w.channels) throw_contract(std::string(who) + ": channel count mismatch");
}

/// Projects the dense weight gradient G_W onto the LU parameters.
void project_weight_grad(const InvConv& w, const std::vector<double>& g_w, InvConvGrad& grad) {
  const int c = w.channels;
  std::vector<double> L, M;
  build_factors(w, L, M);
  // T = P^T G_W  (row i of T = row inv_perm... row taken from G_W at perm-source)
  const std::vector<int> inv = inverse_perm(w.perm);
  std::vector<double> t(static_cast<size_t>(c) * c);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j)
      t[static_cast<size_t>(i) * c + j] = g_w[static_cast<size_t>(inv[i]) * c + j];
  // G_L = T * M^T, restricted to the strict lower triangle
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < i; ++j) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k)
        acc += t[static_cast<size_t>(i) * c + k] * M[static_cast<size_t>(j) * c + k];
      grad.lower[lower_index(i, j)] += acc;
    }
  }
  // G_M = L^T * T, upper triangle including the diagonal
  for (int i = 0; i < c; ++i) {
    for (int j = i; j < c; ++j) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k)
        acc += L[static_cast<size_t>(k) * c + i] * t[static_cast<size_t>(k) * c + j];
      if (j == i) {
        const double s = w.sign_s[i] * std::exp(w.log_s[i]);
        grad.log_s[i] += acc * s;  // d s_i / d log|s_i| = s_i
      } else {
        grad.upper[upper_index(i, j, c)] += acc;
      }
    }
  }
}

}  // namespace

std::vector<double> InvConv::dense_weight() const {
  std::vector<double> L, M;
  build_factors(*this, L, M);
  const std::vector<double> lm = matmul_dense(L, M, channels);
  std::vector<double> w(static_cast<size_t>(channels) * channels);
  for (int i = 0; i < channels; ++i)
    for (int j = 0; j < channels; ++j)
      w[static_cast<size_t>(i) * channels + j] = lm[static_cast<size_t>(perm[i]) * channels + j];
  return w;
}

double InvConv::logdet_per_pixel() const {
  double acc = 0.0;
  for (double v : log_s) acc += v;
  return acc;
}

Tensor invconv_forward(const Tensor& h, const InvConv& w, double* logdet) {
  check_channels(h, w, "invconv_forward");
  const std::vector<double> wd = w.dense_weight();
  const int c = w.channels;
  Tensor y(c, h.h, h.w);
  for (int i = 0; i < c; ++i) {
    double* yp = y.plane(i);
    for (int j = 0; j < c; ++j) {
      const double coeff = wd[static_cast<size_t>(i) * c + j];
      if (coeff == 0.0) continue;
      const double* hp = h.plane(j);
      for (size_t k = 0; k < y.plane_size(); ++k) yp[k] += coeff * hp[k];
    }
  }
  if (logdet) *logdet += static_cast<double>(h.h) * h.w * w.logdet_per_pixel();
  return y;
}

Tensor invconv_inverse(const Tensor& y, const InvConv& w) {
  check_channels(y, w, "invconv_inverse");
  const int c = w.channels;
  for (double ls : w.log_s) {
    if (ls < kMinScaleLog) throw_numeric("invconv_inverse: scale magnitude below 1e-12");
  }
  std::vector<double> L, M;
  build_factors(w, L, M);
  // z = P^T y
  Tensor z(c, y.h, y.w);
  for (int i = 0; i < c; ++i)
    std::memcpy(z.plane(w.perm[i]), y.plane(i), y.plane_size() * sizeof(double));
  // forward substitution L m = z (unit diagonal), in place
  for (int i = 0; i < c; ++i) {
    double* zi = z.plane(i);
    for (int j = 0; j < i; ++j) {
      const double coeff = L[static_cast<size_t>(i) * c + j];
      if (coeff == 0.0) continue;
      const double* zj = z.plane(j);
      for (size_t k = 0; k < z.plane_size(); ++k) zi[k] -= coeff * zj[k];
    }
  }
  // back substitution (U + diag(s)) x = m, in place
  for (int i = c - 1; i >= 0; --i) {
    double* zi = z.plane(i);
    for (int j = i + 1; j < c; ++j) {
      const double coeff = M[static_cast<size_t>(i) * c + j];
      if (coeff == 0.0) continue;
      const double* zj = z.plane(j);
      for (size_t k = 0; k < z.plane_size(); ++k) zi[k] -= coeff * zj[k];
    }
    const double inv_s = 1.0 / M[static_cast<size_t>(i) * c + i];
    for (size_t k = 0; k < z.plane_size(); ++k) zi[k] *= inv_s;
  }
  return z;
}

namespace {

/// g_h = W^T g_y and G_W += sum_px g_y x^T, projected onto the parameters.
Tensor invconv_forward_backward(const InvConv& w, const Tensor& h_in, const Tensor& g_y,
                                InvConvGrad& grad) {
  const int c = w.channels;
  const std::vector<double> wd = w.dense_weight();
  Tensor g_h(c, g_y.h, g_y.w);
  for (int j = 0; j < c; ++j) {
    double* gp = g_h.plane(j);
    for (int i = 0; i < c; ++i) {
      const double coeff = wd[static_cast<size_t>(i) * c + j];
      if (coeff == 0.0) continue;
      const double* gy = g_y.plane(i);
      for (size_t k = 0; k < g_y.plane_size(); ++k) gp[k] += coeff * gy[k];
    }
  }
  std::vector<double> g_w(static_cast<size_t>(c) * c, 0.0);
  for (int i = 0; i < c; ++i) {
    const double* gy = g_y.plane(i);
    for (int j = 0; j < c; ++j) {
      const double* hp = h_in.plane(j);
      double acc = 0.0;
      for (size_t k = 0; k < g_y.plane_size(); ++k) acc += gy[k] * hp[k];
      g_w[static_cast<size_t>(i) * c + j] = acc;
    }
  }
  project_weight_grad(w, g_w, grad);
  return g_h;
}

/// Backward through x = W^{-1} y: g_y = W^{-T} g_x, G_W -= sum g_y x^T.
Tensor invconv_inverse_backward(const InvConv& w, const Tensor& x_out, const Tensor& g_x,
                                InvConvGrad& grad) {
  const int c = w.channels;
  std::vector<double> L, M;
  build_factors(w, L, M);
  // solve M^T a = g_x (lower triangular with diagonal s)
  Tensor a = g_x;
  for (int i = 0; i < c; ++i) {
    double* ai = a.plane(i);
    for (int j = 0; j < i; ++j) {
      const double coeff = M[static_cast<size_t>(j) * c + i];
      if (coeff == 0.0) continue;
      const double* aj = a.plane(j);
      for (size_t k = 0; k < a.plane_size(); ++k) ai[k] -= coeff * aj[k];
    }
    const double inv_s = 1.0 / M[static_cast<size_t>(i) * c + i];
    for (size_t k = 0; k < a.plane_size(); ++k) ai[k] *= inv_s;
  }
  // solve L^T b = a (unit upper triangular)
  for (int i = c - 1; i >= 0; --i) {
    double* ai = a.plane(i);
    for (int j = i + 1; j < c; ++j) {
      const double coeff = L[static_cast<size_t>(j) * c + i];
      if (coeff == 0.0) continue;
      const double* aj = a.plane(j);
      for (size_t k = 0; k < a.plane_size(); ++k) ai[k] -= coeff * aj[k];
    }
  }
  // g_y = P b
  Tensor g_y(c, g_x.h, g_x.w);
  for (int i = 0; i < c; ++i)
    std::memcpy(g_y.plane(i), a.plane(w.perm[i]), a.plane_size() * sizeof(double));
  // G_W -= sum_px g_y x^T
  std::vector<double> g_w(static_cast<size_t>(c) * c, 0.0);
  for (int i = 0; i < c; ++i) {
    const double* gy = g_y.plane(i);
    for (int j = 0; j < c; ++j) {
      const double* xp = x_out.plane(j);
      double acc = 0.0;
      for (size_t k = 0; k < g_y.plane_size(); ++k) acc += gy[k] * xp[k];
      g_w[static_cast<size_t>(i) * c + j] = -acc;
    }
  }
  project_weight_grad(w, g_w, grad);
  return g_y;
}

}  // namespace

// ---------------------------------------------------------------------------
// Coupling layer
// ---------------------------------------------------------------------------

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// clamp(x) = B*(2*sigmoid(x) - 1); exp_s out, returns sum of clamped values.
double clamp_exp(const Tensor& s_raw, double bound, Tensor& exp_s) {
  exp_s = Tensor(s_raw.ch, s_raw.h, s_raw.w);
  double acc = 0.0;
  for (size_t i = 0; i < s_raw.size(); ++i) {
    const double sv = bound * (2.0 * sigmoid(s_raw.v[i]) - 1.0);
    acc += sv;
    exp_s.v[i] = std::exp(sv);
  }
  return acc;
}

inline double clamp_derivative(double x, double bound) {
  const double sg = sigmoid(x);
  return 2.0 * bound * sg * (1.0 - sg);
}

void check_coupling_input(const Tensor& u, const CouplingLayer& layer, const char* who) {
  const int d2 = layer.r.in_ch;
  if (u.ch != layer.split + d2) throw_contract(std::string(who) + ": channel count mismatch");
}

Tensor coupling_forward_impl(const Tensor& u, const CouplingLayer& layer, double* logdet,
                             CouplingTrace* trace) {
  check_coupling_input(u, layer, "coupling_forward");
  const int d = layer.split;
  const Tensor u1 = slice_channels(u, 0, d);
  Tensor u2 = slice_channels(u, d, u.ch - d);

  SubnetTrace* tr_r = trace ? &trace->tr_r : nullptr;
  SubnetTrace* tr_s = trace ? &trace->tr_s : nullptr;
  SubnetTrace* tr_t = trace ? &trace->tr_t : nullptr;

  Tensor v1 = subnet_forward(layer.r, u2, tr_r);
  add_inplace(v1, u1);

  Tensor s_raw = subnet_forward(layer.s, v1, tr_s);
  Tensor exp_s;
  const double sv_sum = clamp_exp(s_raw, layer.clamp, exp_s);
  if (logdet) *logdet += sv_sum;
  Tensor v2 = subnet_forward(layer.t, v1, tr_t);
  for (size_t i = 0; i < v2.size(); ++i) v2.v[i] += u2.v[i] * exp_s.v[i];

  if (trace) {
    trace->u2 = std::move(u2);
    trace->v1 = v1;
    trace->s_raw = std::move(s_raw);
    trace->exp_s = std::move(exp_s);
  }
  return concat_channels(v1, v2);
}

Tensor coupling_inverse_impl(const Tensor& v, const CouplingLayer& layer,
                             CouplingTrace* trace) {
  check_coupling_input(v, layer, "coupling_inverse");
  const int d = layer.split;
  const Tensor v1 = slice_channels(v, 0, d);
  const Tensor v2 = slice_channels(v, d, v.ch - d);

  SubnetTrace* tr_r = trace ? &trace->tr_r : nullptr;
  SubnetTrace* tr_s = trace ? &trace->tr_s : nullptr;
  SubnetTrace* tr_t = trace ? &trace->tr_t : nullptr;

  Tensor s_raw = subnet_forward(layer.s, v1, tr_s);
  Tensor exp_s;
  clamp_exp(s_raw, layer.clamp, exp_s);
  const Tensor tv = subnet_forward(layer.t, v1, tr_t);
  Tensor u2(v2.ch, v2.h, v2.w);
  for (size_t i = 0; i < u2.size(); ++i) u2.v[i] = (v2.v[i] - tv.v[i]) / exp_s.v[i];

  Tensor rv = subnet_forward(layer.r, u2, tr_r);
  Tensor u1 = v1;
  for (size_t i = 0; i < u1.size(); ++i) u1.v[i] -= rv.v[i];

  if (trace) {
    trace->u2 = u2;
    trace->v1 = v1;
    trace->s_raw = std::move(s_raw);
    trace->exp_s = std::move(exp_s);
  }
  return concat_channels(u1, u2);
}

Tensor coupling_forward_backward(const CouplingLayer& layer, const CouplingTrace& tr,
                                 const Tensor& g_v, CouplingGrad& grad) {
  const int d = layer.split;
  Tensor g_v1 = slice_channels(g_v, 0, d);
  const Tensor g_v2 = slice_channels(g_v, d, g_v.ch - d);

  // v2 = u2 .* exp_s + t(v1)
  Tensor g_sraw(tr.s_raw.ch, tr.s_raw.h, tr.s_raw.w);
  for (size_t i = 0; i < g_sraw.size(); ++i) {
    g_sraw.v[i] = g_v2.v[i] * tr.u2.v[i] * tr.exp_s.v[i] *
                  clamp_derivative(tr.s_raw.v[i], layer.clamp);
  }
  Tensor g_u2(tr.u2.ch, tr.u2.h, tr.u2.w);
  for (size_t i = 0; i < g_u2.size(); ++i) g_u2.v[i] = g_v2.v[i] * tr.exp_s.v[i];

  add_inplace(g_v1, subnet_backward(layer.s, tr.tr_s, g_sraw, grad.s));
  add_inplace(g_v1, subnet_backward(layer.t, tr.tr_t, g_v2, grad.t));

  // v1 = u1 + r(u2)
  add_inplace(g_u2, subnet_backward(layer.r, tr.tr_r, g_v1, grad.r));
  return concat_channels(g_v1, g_u2);
}

Tensor coupling_inverse_backward(const CouplingLayer& layer, const CouplingTrace& tr,
                                 const Tensor& g_u, CouplingGrad& grad) {
  const int d = layer.split;
  const Tensor g_u1 = slice_channels(g_u, 0, d);
  Tensor g_u2 = slice_channels(g_u, d, g_u.ch - d);

  // u1 = v1 - r(u2)
  Tensor neg_gu1 = g_u1;
  for (double& v : neg_gu1.v) v = -v;
  add_inplace(g_u2, subnet_backward(layer.r, tr.tr_r, neg_gu1, grad.r));

  // u2 = (v2 - t(v1)) .* exp(-clamp(s(v1)))
  Tensor g_v2(g_u2.ch, g_u2.h, g_u2.w);
  Tensor g_tv(g_u2.ch, g_u2.h, g_u2.w);
  Tensor g_sraw(tr.s_raw.ch, tr.s_raw.h, tr.s_raw.w);
  for (size_t i = 0; i < g_u2.size(); ++i) {
    const double ge = g_u2.v[i] / tr.exp_s.v[i];
    g_v2.v[i] = ge;
    g_tv.v[i] = -ge;
    g_sraw.v[i] = -g_u2.v[i] * tr.u2.v[i] * clamp_derivative(tr.s_raw.v[i], layer.clamp);
  }
  Tensor g_v1 = g_u1;
  add_inplace(g_v1, subnet_backward(layer.s, tr.tr_s, g_sraw, grad.s));
  add_inplace(g_v1, subnet_backward(layer.t, tr.tr_t, g_tv, grad.t));
  return concat_channels(g_v1, g_v2);
}

}  // namespace

Tensor coupling_forward(const Tensor& u, const CouplingLayer& layer, double* logdet) {
  return coupling_forward_impl(u, layer, logdet, nullptr);
}

Tensor coupling_inverse(const Tensor& v, const CouplingLayer& layer) {
  return coupling_inverse_impl(v, layer, nullptr);
}

// ---------------------------------------------------------------------------
// Whole-model tensor passes
// ---------------------------------------------------------------------------

Tensor flow_forward(const Tensor& h0, const FlowModel& m,
                    std::vector<BlockForwardTrace>* trace, double* logdet) {
  if (h0.ch != m.width) throw_contract("flow_forward: channel width mismatch");
  Tensor h = h0;
  if (trace) trace->clear();
  for (const InvBlock& block : m.blocks) {
    BlockForwardTrace bt;
    if (trace) bt.h_in = h;
    double block_logdet = 0.0;
    Tensor u = invconv_forward(h, block.conv, logdet ? &block_logdet : nullptr);
    h = coupling_forward_impl(u, block.coupling, logdet ? &block_logdet : nullptr,
                              trace ? &bt.coupling : nullptr);
    if (logdet) *logdet += block_logdet;
    if (trace) trace->push_back(std::move(bt));
  }
  return h;
}

Tensor flow_inverse(const Tensor& v, const FlowModel& m,
                    std::vector<BlockInverseTrace>* trace) {
  if (v.ch != m.width) throw_contract("flow_inverse: channel width mismatch");
  Tensor h = v;
  if (trace) trace->clear();
  for (auto it = m.blocks.rbegin(); it != m.blocks.rend(); ++it) {
    BlockInverseTrace bt;
    Tensor u = coupling_inverse_impl(h, it->coupling, trace ? &bt.coupling : nullptr);
    h = invconv_inverse(u, it->conv);
    if (trace) {
      bt.h_out = h;
      trace->push_back(std::move(bt));
    }
  }
  return h;
}

Tensor flow_forward_backward(const FlowModel& m, const std::vector<BlockForwardTrace>& trace,
                             const Tensor& g_out, ModelGrad& grads) {
  if (trace.size() != m.blocks.size())
    throw_contract("flow_forward_backward: trace does not match model");
  Tensor g = g_out;
  for (int b = static_cast<int>(m.blocks.size()) - 1; b >= 0; --b) {
    g = coupling_forward_backward(m.blocks[b].coupling, trace[b].coupling, g,
                                  grads.blocks[b].coupling);
    g = invconv_forward_backward(m.blocks[b].conv, trace[b].h_in, g, grads.blocks[b].conv);
  }
  return g;
}

Tensor flow_inverse_backward(const FlowModel& m, const std::vector<BlockInverseTrace>& trace,
                             const Tensor& g_out, ModelGrad& grads) {
  if (trace.size() != m.blocks.size())
    throw_contract("flow_inverse_backward: trace does not match model");
  Tensor g = g_out;
  // traces were pushed while walking blocks back to front; undo in reverse
  for (int i = static_cast<int>(trace.size()) - 1; i >= 0; --i) {
    const int b = static_cast<int>(m.blocks.size()) - 1 - i;
    g = invconv_inverse_backward(m.blocks[b].conv, trace[i].h_out, g, grads.blocks[b].conv);
    g = coupling_inverse_backward(m.blocks[b].coupling, trace[i].coupling, g,
                                  grads.blocks[b].coupling);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Image-level pipeline
// ---------------------------------------------------------------------------

ComplexImage pad_coils(const ComplexImage& x, int target) {
  x.check();
  if (target < x.coils) throw_contract("pad_coils: target below coil count");
  if (target == x.coils) return x;
  ComplexImage out(target, x.height, x.width, x.domain);
  std::memcpy(out.data.data(), x.data.data(), x.size() * sizeof(std::complex<double>));
  for (int p = x.coils; p < target; ++p) {
    const int src = (p - x.coils) % x.coils;
    std::memcpy(out.coil(p), x.coil(src), x.plane_size() * sizeof(std::complex<double>));
  }
  return out;
}

ComplexImage tile_groups(const ComplexImage& y, int groups) {
  y.check();
  if (groups < 1) throw_contract("tile_groups: groups must be >= 1");
  ComplexImage out(y.coils * groups, y.height, y.width, y.domain);
  for (int g = 0; g < groups; ++g) {
    std::memcpy(out.coil(g * y.coils), y.data.data(), y.size() * sizeof(std::complex<double>));
  }
  return out;
}

ComplexImage augment_average(const ComplexImage& y, int n_virtual) {
  y.check();
  if (n_virtual < 1) throw_contract("augment_average: n_virtual must be >= 1");
  const int groups = (y.coils + n_virtual - 1) / n_virtual;
  const ComplexImage padded = pad_coils(y, groups * n_virtual);
  ComplexImage out(n_virtual, y.height, y.width, y.domain);
  const double inv_g = 1.0 / groups;
  for (int j = 0; j < n_virtual; ++j) {
    const std::complex<double>* first = padded.coil(j);
    std::complex<double>* op = out.coil(j);
    std::memcpy(op, first, padded.plane_size() * sizeof(std::complex<double>));
    // mean anchored at the first group: exact when all groups coincide
    for (int g = 1; g < groups; ++g) {
      const std::complex<double>* pg = padded.coil(g * n_virtual + j);
      for (size_t i = 0; i < padded.plane_size(); ++i) op[i] += (pg[i] - first[i]) * inv_g;
    }
  }
  return out;
}

ComplexImage model_forward(const ComplexImage& x, const FlowModel& m, double* logdet) {
  if (x.coils != m.n_physical) throw_contract("model_forward: coil count mismatch");
  const Tensor h0 = split_complex(pad_coils(x, m.padded_coils()));
  if (logdet) *logdet = 0.0;
  const Tensor hk = flow_forward(h0, m, nullptr, logdet);
  return merge_complex(hk, x.domain);
}

ComplexImage model_inverse(const ComplexImage& y, const FlowModel& m) {
  if (y.coils != m.padded_coils()) throw_contract("model_inverse: coil count mismatch");
  const Tensor u = flow_inverse(split_complex(y), m, nullptr);
  ComplexImage full = merge_complex(u, y.domain);
  if (full.coils == m.n_physical) return full;
  ComplexImage out(m.n_physical, y.height, y.width, y.domain);
  std::memcpy(out.data.data(), full.data.data(), out.size() * sizeof(std::complex<double>));
  return out;
}

ComplexImage compress(const ComplexImage& x, const FlowModel& m) {
  return augment_average(model_forward(x, m), m.n_virtual);
}

ComplexImage recover(const ComplexImage& y, const FlowModel& m) {
  if (y.coils != m.n_virtual) throw_contract("recover: expected n_virtual coils");
  return model_inverse(tile_groups(y, m.groups), m);
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

Conv3x3 make_conv(int in_ch, int out_ch, bool zero_init, Rng& rng) {
  Conv3x3 conv;
  conv.in_ch = in_ch;
  conv.out_ch = out_ch;
  conv.w.assign(static_cast<size_t>(out_ch) * in_ch * 9, 0.0);
  conv.b.assign(out_ch, 0.0);
  if (!zero_init) {
    const double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * 9));
    for (double& v : conv.w) v = std * rng.normal();
  }
  return conv;
}

DenseSubnet make_subnet(int in_ch, int out_ch, int growth, Rng& rng) {
  DenseSubnet net;
  net.in_ch = in_ch;
  net.out_ch = out_ch;
  net.growth = growth;
  for (int i = 0; i < 4; ++i)
    net.layers[i] = make_conv(in_ch + i * growth, growth, /*zero_init=*/false, rng);
  // zero-initialized last layer makes the whole coupling an identity
  net.layers[4] = make_conv(in_ch + 4 * growth, out_ch, /*zero_init=*/true, rng);
  return net;
}

InvConv make_invconv(int channels, InitMode mode, Rng& rng) {
  InvConv conv;
  conv.channels = channels;
  conv.perm.resize(channels);
  conv.sign_s.assign(channels, 1.0);
  conv.lower.assign(static_cast<size_t>(channels) * (channels - 1) / 2, 0.0);
  conv.upper.assign(static_cast<size_t>(channels) * (channels - 1) / 2, 0.0);
  conv.log_s.assign(channels, 0.0);
  for (int i = 0; i < channels; ++i) conv.perm[i] = i;
  if (mode == InitMode::Identity) return conv;

  // Random rotation: orthogonal Q from the QR of a Gaussian matrix, then its
  // pivoted LU factors. log-determinant starts at zero.
  Eigen::MatrixXd gauss(channels, channels);
  for (int i = 0; i < channels; ++i)
    for (int j = 0; j < channels; ++j) gauss(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < channels; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(q);
  const Eigen::MatrixXd p = lu.permutationP().inverse();  // q = p * l * u
  const Eigen::MatrixXd lu_mat = lu.matrixLU();
  for (int i = 0; i < channels; ++i) {
    for (int j = 0; j < channels; ++j) {
      if (p(i, j) == 1.0) conv.perm[i] = j;
    }
    for (int j = 0; j < i; ++j) conv.lower[lower_index(i, j)] = lu_mat(i, j);
    for (int j = i + 1; j < channels; ++j)
      conv.upper[upper_index(i, j, channels)] = lu_mat(i, j);
    const double s = lu_mat(i, i);
    conv.sign_s[i] = s < 0 ? -1.0 : 1.0;
    conv.log_s[i] = std::log(std::abs(s));
  }
  return conv;
}

}  // namespace

FlowModel make_flow_model(int n_physical, int n_virtual, int n_blocks, int growth,
                          double clamp, Domain native_domain, uint64_t seed,
                          InitMode mode) {
  if (n_physical < 1 || n_virtual < 1 || n_virtual > n_physical)
    throw_contract("make_flow_model: need 1 <= n_virtual <= n_physical");
  if (n_blocks < 0 || growth < 1) throw_contract("make_flow_model: bad architecture");
  FlowModel m;
  m.n_physical = n_physical;
  m.n_virtual = n_virtual;
  m.groups = (n_physical + n_virtual - 1) / n_virtual;
  m.width = 2 * m.n_virtual * m.groups;
  m.growth = growth;
  m.clamp = clamp;
  m.native_domain = native_domain;
  m.seed = seed;
  Rng rng(seed ^ 0xf1055eedULL);
  const int d = m.width / 2;
  for (int b = 0; b < n_blocks; ++b) {
    InvBlock block;
    block.conv = make_invconv(m.width, mode, rng);
    block.coupling.split = d;
    block.coupling.clamp = clamp;
    block.coupling.r = make_subnet(m.width - d, d, growth, rng);
    block.coupling.s = make_subnet(d, m.width - d, growth, rng);
    block.coupling.t = make_subnet(d, m.width - d, growth, rng);
    m.blocks.push_back(std::move(block));
  }
  return m;
}

ModelGrad ModelGrad::zeros_like(const FlowModel& m) {
  ModelGrad g;
  for (const InvBlock& block : m.blocks) {
    BlockGrad bg;
    bg.conv.lower.assign(block.conv.lower.size(), 0.0);
    bg.conv.upper.assign(block.conv.upper.size(), 0.0);
    bg.conv.log_s.assign(block.conv.log_s.size(), 0.0);
    for (auto [sg, net] : {std::pair{&bg.coupling.r, &block.coupling.r},
                           std::pair{&bg.coupling.s, &block.coupling.s},
                           std::pair{&bg.coupling.t, &block.coupling.t}}) {
      for (int i = 0; i < 5; ++i) {
        sg->layers[i].w.assign(net->layers[i].w.size(), 0.0);
        sg->layers[i].b.assign(net->layers[i].b.size(), 0.0);
      }
    }
    g.blocks.push_back(std::move(bg));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Parameter enumeration and checkpoints
// ---------------------------------------------------------------------------

namespace {

template <typename Model, typename Vec>
std::vector<Vec*> collect_params(Model& m) {
  std::vector<Vec*> out;
  for (auto& block : m.blocks) {
    out.push_back(&block.conv.lower);
    out.push_back(&block.conv.upper);
    out.push_back(&block.conv.log_s);
    for (auto* net : {&block.coupling.r, &block.coupling.s, &block.coupling.t}) {
      for (auto& layer : net->layers) {
        out.push_back(&layer.w);
        out.push_back(&layer.b);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>*> param_arrays(FlowModel& m) {
  return collect_params<FlowModel, std::vector<double>>(m);
}

std::vector<const std::vector<double>*> param_arrays(const FlowModel& m) {
  return collect_params<const FlowModel, const std::vector<double>>(m);
}

std::vector<std::vector<double>*> grad_arrays(ModelGrad& g) {
  std::vector<std::vector<double>*> out;
  for (auto& block : g.blocks) {
    out.push_back(&block.conv.lower);
    out.push_back(&block.conv.upper);
    out.push_back(&block.conv.log_s);
    for (auto* sg : {&block.coupling.r, &block.coupling.s, &block.coupling.t}) {
      for (auto& layer : sg->layers) {
        out.push_back(&layer.w);
        out.push_back(&layer.b);
      }
    }
  }
  return out;
}

size_t param_count(const FlowModel& m) {
  size_t n = 0;
  for (const auto* arr : param_arrays(m)) n += arr->size();
  return n;
}

namespace {

constexpr char kCkptMagic[8] = {'V', 'I', 'C', 'C', '0', '0', '0', '1'};

std::string build_manifest(const FlowModel& m) {
  nlohmann::json j;
  j["blocks"] = m.blocks.size();
  j["clamp"] = m.clamp;
  j["domain"] = m.native_domain == Domain::Image ? "image" : "kspace";
  j["growth"] = m.growth;
  j["groups"] = m.groups;
  j["n_physical"] = m.n_physical;
  j["n_virtual"] = m.n_virtual;
  j["seed"] = m.seed;
  j["split"] = m.width / 2;
  j["width"] = m.width;
  nlohmann::json perms = nlohmann::json::array();
  nlohmann::json signs = nlohmann::json::array();
  for (const InvBlock& block : m.blocks) {
    perms.push_back(block.conv.perm);
    nlohmann::json s = nlohmann::json::array();
    for (double v : block.conv.sign_s) s.push_back(static_cast<int>(v));
    signs.push_back(std::move(s));
  }
  j["perm"] = std::move(perms);
  j["sign"] = std::move(signs);
  return j.dump();
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void save_checkpoint(const std::string& path, const FlowModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_format("save_checkpoint: cannot open " + path, FormatCode::None);
  os.write(kCkptMagic, 8);
  const std::string manifest = build_manifest(m);
  put_u32(os, static_cast<uint32_t>(manifest.size()));
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto* arr : param_arrays(m)) {
    std::vector<float> payload(arr->size());
    for (size_t i = 0; i < arr->size(); ++i) payload[i] = static_cast<float>((*arr)[i]);
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  if (!os) throw_format("save_checkpoint: write failed for " + path, FormatCode::None);
}

FlowModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_format("load_checkpoint: cannot open " + path, FormatCode::None);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw_format("load_checkpoint: bad magic in " + path, FormatCode::BadMagic);
  unsigned char lenb[4];
  is.read(reinterpret_cast<char*>(lenb), 4);
  if (is.gcount() != 4) throw_format("load_checkpoint: truncated header", FormatCode::Truncated);
  const uint32_t len = static_cast<uint32_t>(lenb[0]) | (static_cast<uint32_t>(lenb[1]) << 8) |
                       (static_cast<uint32_t>(lenb[2]) << 16) |
                       (static_cast<uint32_t>(lenb[3]) << 24);
  if (len == 0 || len > (1u << 24))
    throw_format("load_checkpoint: unreasonable manifest size", FormatCode::DimOverflow);
  std::string manifest(len, '\0');
  is.read(manifest.data(), len);
  if (is.gcount() != static_cast<std::streamsize>(len))
    throw_format("load_checkpoint: truncated manifest", FormatCode::Truncated);
  nlohmann::json j = nlohmann::json::parse(manifest, nullptr, false);
  if (j.is_discarded()) throw_format("load_checkpoint: manifest is not JSON", FormatCode::BadSidecar);

  FlowModel m;
  try {
    const int blocks = j.at("blocks").get<int>();
    m = make_flow_model(j.at("n_physical").get<int>(), j.at("n_virtual").get<int>(), blocks,
                        j.at("growth").get<int>(), j.at("clamp").get<double>(),
                        j.at("domain").get<std::string>() == "image" ? Domain::Image
                                                                     : Domain::KSpace,
                        j.at("seed").get<uint64_t>(), InitMode::Identity);
    const auto& perms = j.at("perm");
    const auto& signs = j.at("sign");
    for (int b = 0; b < blocks; ++b) {
      auto& conv = m.blocks[b].conv;
      const auto perm = perms.at(b).get<std::vector<int>>();
      const auto sign = signs.at(b).get<std::vector<int>>();
      if (static_cast<int>(perm.size()) != m.width || static_cast<int>(sign.size()) != m.width)
        throw_format("load_checkpoint: inconsistent manifest arrays", FormatCode::BadSidecar);
      conv.perm = perm;
      for (int i = 0; i < m.width; ++i) conv.sign_s[i] = sign[i] < 0 ? -1.0 : 1.0;
    }
  } catch (const nlohmann::json::exception&) {
    throw_format("load_checkpoint: manifest missing fields", FormatCode::BadSidecar);
  }

  for (auto* arr : param_arrays(m)) {
    std::vector<float> payload(arr->size());
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(float)))
      throw_format("load_checkpoint: truncated payload", FormatCode::Truncated);
    for (size_t i = 0; i < arr->size(); ++i) (*arr)[i] = static_cast<double>(payload[i]);
  }
  return m;
}

}  // namespace vicc
