#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vicc/flow.hpp"
#include "vicc/image.hpp"
#include "vicc/phantom.hpp"

namespace vicc {

enum class LossVariant { ImageDomain, KSpaceDomain };
enum class TargetKind { Scc, GroupAverage };
enum class ForwardRef { Original, Target };
enum class ReverseSource { SelfConsistent, Target };

struct TrainConfig {
  LossVariant variant = LossVariant::KSpaceDomain;
  double lambda = 1.0;
  double lr = 1e-4;
  int lr_halving_epochs = 20;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 32;
  int batch = 1;
  uint64_t seed = 0;
  long max_steps = 0;  // 0 = run all epochs

  // architecture
  int blocks = 4;
  int growth = 8;
  double clamp = 2.0;
  InitMode init = InitMode::RandomRotation;

  // supervision wiring
  TargetKind target = TargetKind::Scc;
  ForwardRef forward_ref = ForwardRef::Original;
  ReverseSource reverse_source = ReverseSource::SelfConsistent;

  void validate() const;
};

/// key = value text file mirroring the TrainConfig field names; '#' starts
/// a comment. Unknown keys are rejected.
TrainConfig load_train_config(const std::string& path);

struct TrainingPair {
  ComplexImage x;         // n_physical coils, domain per variant
  ComplexImage y_target;  // n_virtual coils, same domain
};

/// Builds pairs from image-domain slices: converts to the variant's domain,
/// optionally applies the undersampling mask (in k-space), and constructs
/// the compression target. With a mask, the classical fits use ACS columns.
std::vector<TrainingPair> build_dataset(const std::vector<ComplexImage>& slices,
                                        const TrainConfig& cfg, int n_virtual,
                                        const SamplingMask* mask = nullptr);

struct LossBreakdown {
  double total = 0.0;
  double forward = 0.0;
  double reverse = 0.0;
  double group_consistency = 0.0;
};

/// Total loss lambda*L_f + L_r for one pair; when grads is non-null the
/// exact reverse-mode parameter gradients are accumulated into it.
LossBreakdown loss_total(const FlowModel& m, const TrainingPair& pair, const TrainConfig& cfg,
                         ModelGrad* grads = nullptr);

struct AdamState {
  long step = 0;
  std::vector<std::vector<double>> m1, m2;
  static AdamState zeros_like(const FlowModel& m);
};

/// Standard Adam update with bias correction.
void adam_step(FlowModel& model, ModelGrad& grads, AdamState& state, const TrainConfig& cfg,
               double lr);

struct TraceRow {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss_forward = 0.0;
  double loss_reverse = 0.0;
  double total = 0.0;
  double group_consistency = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
};

/// epochs x dataset Adam steps in fixed data order; lr halves every
/// lr_halving_epochs. Aborts with a Numeric error if the loss passes 1e6.
TrainResult train(FlowModel& model, const std::vector<TrainingPair>& dataset,
                  const TrainConfig& cfg);

void write_loss_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);

/// Max pairwise mean absolute sos-difference between the output groups of
/// model_forward; the proxy for how recoverable the compression is.
double group_consistency(const ComplexImage& y_full, int n_virtual);

}  // namespace vicc
