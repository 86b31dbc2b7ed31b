#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vicc/image.hpp"
#include "vicc/tensor.hpp"

namespace vicc {

/// 3x3 convolution, stride 1, zero padding 1. Weights are [out][in][3][3]
/// row-major.
struct Conv3x3 {
  int in_ch = 0, out_ch = 0;
  std::vector<double> w;  // out*in*9
  std::vector<double> b;  // out
};

/// Five 3x3 convolutions with dense (concatenative) connectivity and
/// LeakyReLU(0.2) after the first four. The last layer has no activation.
struct DenseSubnet {
  int in_ch = 0, out_ch = 0, growth = 0;
  std::array<Conv3x3, 5> layers;
};

/// Per-pixel channel mixing by W = P * L * (U + diag(s)), parameterized by
/// its LU factors. perm encodes P as (P z)[i] = z[perm[i]]; sign_s is fixed,
/// log_s, lower and upper (packed strict triangles, row-major) are learnable.
struct InvConv {
  int channels = 0;
  std::vector<int> perm;
  std::vector<double> sign_s;
  std::vector<double> lower;  // channels*(channels-1)/2
  std::vector<double> upper;  // channels*(channels-1)/2
  std::vector<double> log_s;  // channels

  /// Reconstructs the dense weight matrix (row-major channels x channels).
  std::vector<double> dense_weight() const;
  /// log|det W| for one pixel, i.e. sum(log|s_i|).
  double logdet_per_pixel() const;
};

/// Affine coupling with an extra additive branch on the first partition:
///   v1 = u1 + r(u2)
///   v2 = u2 .* exp(clamp(s(v1))) + t(v1)
/// where clamp(x) = B*(2*sigmoid(x) - 1) keeps the scale in [e^-B, e^B].
struct CouplingLayer {
  int split = 0;  // d; first partition has channels [0, d)
  double clamp = 2.0;
  DenseSubnet r, s, t;
};

struct InvBlock {
  InvConv conv;
  CouplingLayer coupling;
};

/// The invertible compression network. Physical coils are padded to
/// n_virtual*groups by cyclic replication; every block preserves the
/// 2*n_virtual*groups real channel width.
struct FlowModel {
  int n_physical = 0;
  int n_virtual = 0;
  int groups = 1;
  int width = 0;  // D = 2 * n_virtual * groups
  int growth = 8;
  double clamp = 2.0;
  Domain native_domain = Domain::KSpace;
  uint64_t seed = 0;
  std::vector<InvBlock> blocks;

  int padded_coils() const { return n_virtual * groups; }
};

enum class InitMode { Identity, RandomRotation };

FlowModel make_flow_model(int n_physical, int n_virtual, int n_blocks, int growth,
                          double clamp, Domain native_domain, uint64_t seed,
                          InitMode mode);

// ---------------------------------------------------------------------------
// Tensor-level ops and their reverse-mode adjoints
// ---------------------------------------------------------------------------

struct SubnetTrace {
  std::array<Tensor, 5> inputs;   // concatenated input of each conv
  std::array<Tensor, 4> preact;   // conv output before LeakyReLU
};

struct CouplingTrace {
  SubnetTrace tr_r, tr_s, tr_t;
  Tensor u2;     // second partition on the u side
  Tensor v1;     // first partition on the v side (input to s and t)
  Tensor s_raw;  // s subnet output before clamping
  Tensor exp_s;  // exp(clamp(s_raw))
};

struct BlockForwardTrace {
  Tensor h_in;  // block input (invconv input)
  CouplingTrace coupling;
};

struct BlockInverseTrace {
  Tensor h_out;  // invconv_inverse output per pixel (needed for dW)
  CouplingTrace coupling;
};

struct ConvGrad {
  std::vector<double> w, b;
};
struct SubnetGrad {
  std::array<ConvGrad, 5> layers;
};
struct InvConvGrad {
  std::vector<double> lower, upper, log_s;
};
struct CouplingGrad {
  SubnetGrad r, s, t;
};
struct BlockGrad {
  InvConvGrad conv;
  CouplingGrad coupling;
};
struct ModelGrad {
  std::vector<BlockGrad> blocks;
  static ModelGrad zeros_like(const FlowModel& m);
};

Tensor invconv_forward(const Tensor& h, const InvConv& w, double* logdet = nullptr);
Tensor invconv_inverse(const Tensor& y, const InvConv& w);
Tensor coupling_forward(const Tensor& u, const CouplingLayer& layer,
                        double* logdet = nullptr);
Tensor coupling_inverse(const Tensor& v, const CouplingLayer& layer);

/// Forward through all blocks. logdet accumulates the full Jacobian
/// log-determinant (invconv plus coupling scale terms).
Tensor flow_forward(const Tensor& h0, const FlowModel& m,
                    std::vector<BlockForwardTrace>* trace = nullptr,
                    double* logdet = nullptr);
Tensor flow_inverse(const Tensor& v, const FlowModel& m,
                    std::vector<BlockInverseTrace>* trace = nullptr);

/// Reverse-mode through flow_forward; returns the gradient at h0 and
/// accumulates parameter gradients.
Tensor flow_forward_backward(const FlowModel& m, const std::vector<BlockForwardTrace>& trace,
                             const Tensor& g_out, ModelGrad& grads);
/// Reverse-mode through flow_inverse; g_out is the gradient at the inverse
/// output, the return value the gradient at the inverse input.
Tensor flow_inverse_backward(const FlowModel& m, const std::vector<BlockInverseTrace>& trace,
                             const Tensor& g_out, ModelGrad& grads);

// ---------------------------------------------------------------------------
// Image-level pipeline
// ---------------------------------------------------------------------------

/// Appends (target - coils) coils replicated cyclically from coil 0.
ComplexImage pad_coils(const ComplexImage& x, int target);
/// Repeats the N coils `groups` times to width N*groups.
ComplexImage tile_groups(const ComplexImage& y, int groups);
/// Partitions coils into contiguous groups of n_virtual and averages them.
/// Inputs not already a multiple of n_virtual wide are padded first.
/// The mean is anchored at the first group so that identical groups come
/// back exactly.
ComplexImage augment_average(const ComplexImage& y, int n_virtual);

/// split -> blocks -> merge on the coil-padded input; output keeps the
/// input domain and has padded_coils() coils.
ComplexImage model_forward(const ComplexImage& x, const FlowModel& m,
                           double* logdet = nullptr);
/// Exact inverse of model_forward (returns n_physical coils).
ComplexImage model_inverse(const ComplexImage& y, const FlowModel& m);

/// The learned compression map: augment_average(model_forward(x)).
ComplexImage compress(const ComplexImage& x, const FlowModel& m);
/// Backward mapping: tile, invert, unpad. Exact when the forward output's
/// groups are identical.
ComplexImage recover(const ComplexImage& y, const FlowModel& m);

// ---------------------------------------------------------------------------
// Parameters and checkpoints
// ---------------------------------------------------------------------------

/// All learnable arrays in a fixed order (the checkpoint payload order).
std::vector<std::vector<double>*> param_arrays(FlowModel& m);
std::vector<const std::vector<double>*> param_arrays(const FlowModel& m);
std::vector<std::vector<double>*> grad_arrays(ModelGrad& g);
size_t param_count(const FlowModel& m);

/// Checkpoint container: magic "VICC0001", little-endian u32 manifest
/// length, JSON manifest, then every learnable array as little-endian
/// binary32 in param_arrays order. Load-then-save is byte-identical.
void save_checkpoint(const std::string& path, const FlowModel& m);
FlowModel load_checkpoint(const std::string& path);

}  // namespace vicc
