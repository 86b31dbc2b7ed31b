#include "vicc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vicc/compression.hpp"
#include "vicc/errors.hpp"
#include "vicc/fft.hpp"
#include "vicc/losses.hpp"

namespace vicc {

void TrainConfig::validate() const {
  if (lambda <= 0) throw_contract("TrainConfig: lambda must be > 0");
  if (lr <= 0) throw_contract("TrainConfig: lr must be > 0");
  if (adam_beta1 <= 0 || adam_beta1 >= 1 || adam_beta2 <= 0 || adam_beta2 >= 1)
    throw_contract("TrainConfig: betas must be in (0, 1)");
  if (adam_eps <= 0) throw_contract("TrainConfig: adam_eps must be > 0");
  if (epochs < 0 || max_steps < 0) throw_contract("TrainConfig: negative step budget");
  if (batch != 1) throw_contract("TrainConfig: only batch size 1 is supported");
  if (lr_halving_epochs < 1) throw_contract("TrainConfig: lr_halving_epochs must be >= 1");
  if (blocks < 0 || growth < 1) throw_contract("TrainConfig: bad architecture");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig load_train_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_format("load_train_config: cannot open " + path, FormatCode::None);
  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw_usage("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "variant") {
        if (val == "i" || val == "image") cfg.variant = LossVariant::ImageDomain;
        else if (val == "k" || val == "kspace") cfg.variant = LossVariant::KSpaceDomain;
        else throw_usage("config: unknown variant '" + val + "'");
      } else if (key == "lambda") cfg.lambda = std::stod(val);
      else if (key == "lr") cfg.lr = std::stod(val);
      else if (key == "lr_halving_epochs") cfg.lr_halving_epochs = std::stoi(val);
      else if (key == "adam_beta1") cfg.adam_beta1 = std::stod(val);
      else if (key == "adam_beta2") cfg.adam_beta2 = std::stod(val);
      else if (key == "adam_eps") cfg.adam_eps = std::stod(val);
      else if (key == "epochs") cfg.epochs = std::stoi(val);
      else if (key == "batch") cfg.batch = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "max_steps") cfg.max_steps = std::stol(val);
      else if (key == "blocks") cfg.blocks = std::stoi(val);
      else if (key == "growth") cfg.growth = std::stoi(val);
      else if (key == "clamp") cfg.clamp = std::stod(val);
      else if (key == "init") {
        if (val == "identity") cfg.init = InitMode::Identity;
        else if (val == "rotation") cfg.init = InitMode::RandomRotation;
        else throw_usage("config: unknown init '" + val + "'");
      } else if (key == "target") {
        if (val == "scc") cfg.target = TargetKind::Scc;
        else if (val == "average") cfg.target = TargetKind::GroupAverage;
        else throw_usage("config: unknown target '" + val + "'");
      } else if (key == "forward_ref") {
        if (val == "original") cfg.forward_ref = ForwardRef::Original;
        else if (val == "target") cfg.forward_ref = ForwardRef::Target;
        else throw_usage("config: unknown forward_ref '" + val + "'");
      } else if (key == "reverse_source") {
        if (val == "self") cfg.reverse_source = ReverseSource::SelfConsistent;
        else if (val == "target") cfg.reverse_source = ReverseSource::Target;
        else throw_usage("config: unknown reverse_source '" + val + "'");
      } else {
        throw_usage("config: unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw_usage("config: bad value for '" + key + "'");
    } catch (const std::out_of_range&) {
      throw_usage("config: value out of range for '" + key + "'");
    }
  }
  return cfg;
}

std::vector<TrainingPair> build_dataset(const std::vector<ComplexImage>& slices,
                                        const TrainConfig& cfg, int n_virtual,
                                        const SamplingMask* mask) {
  if (slices.empty()) throw_contract("build_dataset: empty slice list");
  std::vector<int> calib_cols;
  if (mask) {
    const int start = mask->width / 2 - mask->acs_lines / 2;
    for (int i = 0; i < mask->acs_lines; ++i) calib_cols.push_back(start + i);
  }
  std::vector<TrainingPair> out;
  for (const ComplexImage& slice : slices) {
    ComplexImage img = slice.domain == Domain::Image ? slice : ifft2c(slice);
    ComplexImage ksp = fft2c(img);
    if (mask) {
      ksp = apply_mask(ksp, *mask);
      img = ifft2c(ksp);
    }
    TrainingPair pair;
    pair.x = cfg.variant == LossVariant::KSpaceDomain ? ksp : img;
    if (cfg.target == TargetKind::Scc) {
      const CompressionMatrix a = scc_fit(ksp, n_virtual, calib_cols);
      pair.y_target = compress_apply(pair.x, a);  // per-sample map, domain-agnostic
    } else {
      pair.y_target = augment_average(pair.x, n_virtual);
    }
    out.push_back(std::move(pair));
  }
  return out;
}

double group_consistency(const ComplexImage& y_full, int n_virtual) {
  if (y_full.coils % n_virtual != 0)
    throw_contract("group_consistency: coils not a multiple of n_virtual");
  const int groups = y_full.coils / n_virtual;
  if (groups < 2) return 0.0;
  const size_t npx = y_full.plane_size();
  std::vector<std::vector<double>> mag(groups, std::vector<double>(npx, 0.0));
  for (int g = 0; g < groups; ++g) {
    for (int j = 0; j < n_virtual; ++j) {
      const std::complex<double>* p = y_full.coil(g * n_virtual + j);
      for (size_t i = 0; i < npx; ++i) mag[g][i] += std::norm(p[i]);
    }
    for (size_t i = 0; i < npx; ++i) mag[g][i] = std::sqrt(mag[g][i]);
  }
  double worst = 0.0;
  for (int a = 0; a < groups; ++a) {
    for (int b = a + 1; b < groups; ++b) {
      double acc = 0.0;
      for (size_t i = 0; i < npx; ++i) acc += std::abs(mag[a][i] - mag[b][i]);
      worst = std::max(worst, acc / static_cast<double>(npx));
    }
  }
  return worst;
}

namespace {

/// d(sos)/d(coil values), chained with the per-pixel upstream gradient.
Tensor sos_backward(const ComplexImage& img, const RealImage& sos_img,
                    const std::vector<double>& g_sos) {
  Tensor g(2 * img.coils, img.height, img.width);
  for (int c = 0; c < img.coils; ++c) {
    const std::complex<double>* p = img.coil(c);
    double* gre = g.plane(2 * c);
    double* gim = g.plane(2 * c + 1);
    for (size_t i = 0; i < img.plane_size(); ++i) {
      const double s = sos_img.data[i];
      if (s > 0.0) {
        const double f = g_sos[i] / s;
        gre[i] = p[i].real() * f;
        gim[i] = p[i].imag() * f;
      }
    }
  }
  return g;
}

}  // namespace

LossBreakdown loss_total(const FlowModel& m, const TrainingPair& pair, const TrainConfig& cfg,
                         ModelGrad* grads) {
  if (pair.x.coils != m.n_physical) throw_contract("loss_total: x coil count mismatch");
  if (pair.y_target.coils != m.n_virtual &&
      (cfg.forward_ref == ForwardRef::Target || cfg.reverse_source == ReverseSource::Target))
    throw_contract("loss_total: y_target coil count mismatch");
  const Domain expected =
      cfg.variant == LossVariant::KSpaceDomain ? Domain::KSpace : Domain::Image;
  if (pair.x.domain != expected) throw_contract("loss_total: x domain mismatch with variant");

  const int n_virtual = m.n_virtual;
  const int groups = m.groups;

  // forward pass
  std::vector<BlockForwardTrace> fwd_trace;
  const Tensor h0 = split_complex(pad_coils(pair.x, m.padded_coils()));
  const Tensor hk = flow_forward(h0, m, grads ? &fwd_trace : nullptr, nullptr);
  const ComplexImage y_full = merge_complex(hk, pair.x.domain);
  const ComplexImage y_hat = augment_average(y_full, n_virtual);

  LossBreakdown lb;
  lb.group_consistency = group_consistency(y_full, n_virtual);

  // forward loss: sos comparison in the image domain
  const ComplexImage& ref = cfg.forward_ref == ForwardRef::Original ? pair.x : pair.y_target;
  const bool kspace = cfg.variant == LossVariant::KSpaceDomain;
  const ComplexImage img_hat = kspace ? ifft2c(y_hat) : y_hat;
  const ComplexImage img_ref = kspace ? ifft2c(ref) : ref;
  const RealImage sos_hat = sos(img_hat);
  const RealImage sos_ref = sos(img_ref);
  lb.forward = smooth_l1(sos_hat, sos_ref);

  // reverse pass
  const ComplexImage& y_rev =
      cfg.reverse_source == ReverseSource::SelfConsistent ? y_hat : pair.y_target;
  std::vector<BlockInverseTrace> inv_trace;
  const Tensor v0 = split_complex(tile_groups(y_rev, groups));
  const Tensor u_end = flow_inverse(v0, m, grads ? &inv_trace : nullptr);
  const Tensor sx_rec = slice_channels(u_end, 0, 2 * m.n_physical);
  const Tensor sx = split_complex(pair.x);
  lb.reverse = smooth_l1(sx_rec, sx);

  lb.total = cfg.lambda * lb.forward + lb.reverse;
  if (!grads) return lb;

  // ---- reverse-mode ----
  // L_r: elementwise smooth_l1 over the recovered stack
  Tensor g_uend(u_end.ch, u_end.h, u_end.w);
  {
    const double inv_n = 1.0 / static_cast<double>(sx.size());
    for (size_t i = 0; i < sx.size(); ++i)
      g_uend.v[i] = smooth_l1_derivative(sx_rec.v[i] - sx.v[i]) * inv_n;
    // channels beyond 2*n_physical stay zero (padding was discarded)
  }
  const Tensor g_v0 = flow_inverse_backward(m, inv_trace, g_uend, *grads);
  // tile backward: groups sum up
  Tensor g_yrev(2 * n_virtual, g_v0.h, g_v0.w);
  for (int g = 0; g < groups; ++g) {
    const Tensor part = slice_channels(g_v0, g * 2 * n_virtual, 2 * n_virtual);
    add_inplace(g_yrev, part);
  }

  // L_f: smooth_l1 of sos images; only the x_hat side carries gradient
  std::vector<double> g_sos(sos_hat.size());
  {
    const double scale = cfg.lambda / static_cast<double>(sos_hat.size());
    for (size_t i = 0; i < sos_hat.size(); ++i)
      g_sos[i] = smooth_l1_derivative(sos_hat.data[i] - sos_ref.data[i]) * scale;
  }
  Tensor g_imghat = sos_backward(img_hat, sos_hat, g_sos);
  Tensor g_yhat;
  if (kspace) {
    // adjoint of the unitary centered inverse transform is the forward one
    const ComplexImage g_img = merge_complex(g_imghat, Domain::Image);
    g_yhat = split_complex(fft2c(g_img));
  } else {
    g_yhat = std::move(g_imghat);
  }
  if (cfg.reverse_source == ReverseSource::SelfConsistent) add_inplace(g_yhat, g_yrev);

  // average backward: every group sees g/groups
  Tensor g_yfull(2 * m.padded_coils(), g_yhat.h, g_yhat.w);
  const double inv_g = 1.0 / groups;
  for (int g = 0; g < groups; ++g) {
    for (int c = 0; c < 2 * n_virtual; ++c) {
      double* dst = g_yfull.plane(g * 2 * n_virtual + c);
      const double* src = g_yhat.plane(c);
      for (size_t i = 0; i < g_yfull.plane_size(); ++i) dst[i] = src[i] * inv_g;
    }
  }
  flow_forward_backward(m, fwd_trace, g_yfull, *grads);
  return lb;
}

AdamState AdamState::zeros_like(const FlowModel& m) {
  AdamState st;
  for (const auto* arr : param_arrays(m)) {
    st.m1.emplace_back(arr->size(), 0.0);
    st.m2.emplace_back(arr->size(), 0.0);
  }
  return st;
}

void adam_step(FlowModel& model, ModelGrad& grads, AdamState& state, const TrainConfig& cfg,
               double lr) {
  auto params = param_arrays(model);
  auto gs = grad_arrays(grads);
  if (params.size() != gs.size() || params.size() != state.m1.size())
    throw_contract("adam_step: mismatched parameter/gradient/state layout");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (size_t a = 0; a < params.size(); ++a) {
    std::vector<double>& p = *params[a];
    const std::vector<double>& g = *gs[a];
    std::vector<double>& m1 = state.m1[a];
    std::vector<double>& m2 = state.m2[a];
    if (p.size() != g.size()) throw_contract("adam_step: array size mismatch");
    for (size_t i = 0; i < p.size(); ++i) {
      m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * g[i];
      m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double mhat = m1[i] / bc1;
      const double vhat = m2[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

TrainResult train(FlowModel& model, const std::vector<TrainingPair>& dataset,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw_contract("train: empty dataset");
  TrainResult result;
  AdamState state = AdamState::zeros_like(model);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(0.5, epoch / cfg.lr_halving_epochs);
    for (const TrainingPair& pair : dataset) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) return result;
      ModelGrad grads = ModelGrad::zeros_like(model);
      const LossBreakdown lb = loss_total(model, pair, cfg, &grads);
      if (!std::isfinite(lb.total) || lb.total > 1e6)
        throw_numeric("train: loss diverged at step " + std::to_string(step));
      result.trace.push_back(
          {step, epoch, lr, lb.forward, lb.reverse, lb.total, lb.group_consistency});
      adam_step(model, grads, state, cfg, lr);
      ++step;
    }
  }
  return result;
}

void write_loss_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream os(path);
  if (!os) throw_format("write_loss_trace_csv: cannot open " + path, FormatCode::None);
  os << "step,epoch,lr,L_f,L_r,total,group_consistency\n";
  char buf[256];
  for (const TraceRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", r.step, r.epoch,
                  r.lr, r.loss_forward, r.loss_reverse, r.total, r.group_consistency);
    os << buf;
  }
}

}  // namespace vicc
