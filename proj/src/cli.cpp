#include "vicc/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "vicc/compression.hpp"
#include "vicc/errors.hpp"
#include "vicc/fft.hpp"
#include "vicc/flow.hpp"
#include "vicc/mcs_io.hpp"
#include "vicc/metrics.hpp"
#include "vicc/pgm.hpp"
#include "vicc/phantom.hpp"
#include "vicc/train.hpp"

namespace vicc {
namespace {

namespace fs = std::filesystem;

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw_usage("--size expects HxW, e.g. 64x64");
  try {
    const int h = std::stoi(s.substr(0, x));
    const int w = std::stoi(s.substr(x + 1));
    if (h < 1 || w < 1) throw_usage("--size dimensions must be >= 1");
    return {h, w};
  } catch (const std::invalid_argument&) {
    throw_usage("--size expects HxW, e.g. 64x64");
  } catch (const std::out_of_range&) {
    throw_usage("--size value out of range");
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

ComplexImage to_domain(const ComplexImage& img, Domain want) {
  if (img.domain == want) return img;
  return want == Domain::KSpace ? fft2c(img) : ifft2c(img);
}

std::string domain_name(Domain d) { return d == Domain::Image ? "image" : "kspace"; }

// ---------------------------------------------------------------------------

int cmd_phantom(const std::string& size, int coils, uint64_t seed, double noise,
                const std::string& out) {
  const auto [h, w] = parse_size(size);
  if (coils < 2) throw_usage("--coils must be >= 2");
  PhantomSpec spec = default_phantom_spec(h, w, coils, seed);
  ComplexImage img = make_phantom(spec);
  if (noise > 0) {
    Rng rng(seed ^ 0x6e015eULL);
    add_complex_noise(img, noise, rng);
  }
  nlohmann::json meta;
  meta["seed"] = seed;
  nlohmann::json js;
  js["height"] = spec.height;
  js["width"] = spec.width;
  js["coils"] = spec.coils;
  js["coil_radius"] = spec.coil_radius;
  js["sensitivity_width"] = spec.sensitivity_width;
  js["noise"] = noise;
  nlohmann::json ells = nlohmann::json::array();
  for (const Ellipse& e : spec.ellipses)
    ells.push_back({e.cx, e.cy, e.ax, e.ay, e.angle_deg, e.intensity});
  js["ellipses"] = std::move(ells);
  meta["spec"] = std::move(js);
  save_mcs(out, img, meta.dump());
  std::cout << "phantom " << h << "x" << w << " coils=" << coils << " seed=" << seed
            << " -> " << out << "\n";
  return 0;
}

int cmd_baseline(const std::string& method, const std::string& in, int n_virtual,
                 const std::string& out, const std::string& matrix_out,
                 const std::string& calib) {
  if (method != "scc" && method != "gcc") throw_usage("--method must be scc or gcc");
  if (calib != "full" && calib != "acs") throw_usage("--calib must be full or acs");
  const ComplexImage input = load_mcs(in);
  if (n_virtual < 1 || n_virtual > input.coils)
    throw_usage("--virtual must be in [1, coils]");
  const ComplexImage ksp = to_domain(input, Domain::KSpace);
  std::vector<int> cols;
  if (calib == "acs") {
    cols = detect_acs_columns(ksp);
    if (cols.empty()) throw_format("baseline: cannot detect an ACS block", FormatCode::None);
  }
  const CompressionMatrix a =
      method == "scc" ? scc_fit(ksp, n_virtual, cols) : gcc_fit(ksp, n_virtual, cols);
  const double err = compression_error(ksp, a);
  ComplexImage y = compress_apply(ksp, a);
  y = to_domain(y, input.domain);
  nlohmann::json meta;
  meta["source"] = in;
  meta["method"] = method;
  save_mcs(out, y, meta.dump());
  if (!matrix_out.empty()) save_ccm(matrix_out, a);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "method=%s n_virtual=%d compression_error=%.12e\n",
                method.c_str(), n_virtual, err);
  std::cout << buf;
  return 0;
}

std::vector<ComplexImage> load_slice_dir(const std::string& dir) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw_usage("--data must be a directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".mcs") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw_usage("no .mcs files under " + dir);
  std::vector<ComplexImage> slices;
  for (const std::string& f : files) slices.push_back(load_mcs(f));
  for (const ComplexImage& s : slices) {
    if (s.coils != slices[0].coils || s.height != slices[0].height ||
        s.width != slices[0].width)
      throw_format("train: slices disagree in shape", FormatCode::None);
  }
  return slices;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out,
              const std::string& variant, int n_virtual, const std::string& mask_arg,
              const std::string& trace_path) {
  TrainConfig cfg;
  if (!config.empty()) cfg = load_train_config(config);
  if (!variant.empty()) {
    if (variant == "i") cfg.variant = LossVariant::ImageDomain;
    else if (variant == "k") cfg.variant = LossVariant::KSpaceDomain;
    else throw_usage("--variant must be i or k");
  }
  cfg.validate();

  const std::vector<ComplexImage> slices = load_slice_dir(data);
  const int coils = slices[0].coils;
  if (n_virtual < 1 || n_virtual > coils) throw_usage("--virtual must be in [1, coils]");

  SamplingMask mask;
  const SamplingMask* mask_ptr = nullptr;
  if (!mask_arg.empty()) {
    const auto parts = split_list(mask_arg);
    if (parts.size() != 2) throw_usage("--mask expects R,acs");
    int r = 0, acs = 0;
    try {
      r = std::stoi(parts[0]);
      acs = std::stoi(parts[1]);
    } catch (const std::exception&) {
      throw_usage("--mask expects integers R,acs");
    }
    mask = make_mask(slices[0].height, slices[0].width, r, acs);
    mask_ptr = &mask;
  }

  const Domain native =
      cfg.variant == LossVariant::KSpaceDomain ? Domain::KSpace : Domain::Image;
  FlowModel model = make_flow_model(coils, n_virtual, cfg.blocks, cfg.growth, cfg.clamp,
                                    native, cfg.seed, cfg.init);
  const std::vector<TrainingPair> dataset = build_dataset(slices, cfg, n_virtual, mask_ptr);
  const TrainResult result = train(model, dataset, cfg);
  save_checkpoint(out, model);
  const std::string trace_file = trace_path.empty() ? out + ".loss.csv" : trace_path;
  write_loss_trace_csv(trace_file, result.trace);
  if (!result.trace.empty()) {
    const TraceRow& last = result.trace.back();
    char buf[200];
    std::snprintf(buf, sizeof(buf), "steps=%ld final_total=%.6g final_group_consistency=%.6g\n",
                  last.step + 1, last.total, last.group_consistency);
    std::cout << buf;
  } else {
    std::cout << "steps=0\n";
  }
  std::cout << "checkpoint -> " << out << "\n";
  return 0;
}

int cmd_compress(const std::string& model_path, const std::string& in,
                 const std::string& out) {
  const FlowModel model = load_checkpoint(model_path);
  const ComplexImage input = load_mcs(in);
  if (input.coils != model.n_physical)
    throw_format("compress: input has " + std::to_string(input.coils) +
                     " coils but the checkpoint expects " + std::to_string(model.n_physical),
                 FormatCode::None);
  const ComplexImage native = to_domain(input, model.native_domain);
  const ComplexImage y = compress(native, model);
  nlohmann::json meta;
  meta["source"] = in;
  meta["model"] = model_path;
  save_mcs(out, y, meta.dump());
  std::cout << "coils " << model.n_physical << " -> " << model.n_virtual << " ("
            << domain_name(model.native_domain) << " domain)\n";
  return 0;
}

int cmd_recover(const std::string& model_path, const std::string& in, const std::string& out,
                const std::string& ref) {
  const FlowModel model = load_checkpoint(model_path);
  const ComplexImage input = load_mcs(in);
  if (input.coils != model.n_virtual)
    throw_format("recover: input has " + std::to_string(input.coils) +
                     " coils but the checkpoint expects " + std::to_string(model.n_virtual),
                 FormatCode::None);
  const ComplexImage native = to_domain(input, model.native_domain);
  const ComplexImage x = recover(native, model);
  nlohmann::json meta;
  meta["source"] = in;
  meta["model"] = model_path;
  save_mcs(out, x, meta.dump());
  std::cout << "coils " << model.n_virtual << " -> " << model.n_physical << "\n";
  if (!ref.empty()) {
    const ComplexImage reference = load_mcs(ref);
    const MetricReport report = evaluate(reference, {{"recover", x}});
    char buf[120];
    if (std::isinf(report.rows[0].psnr_db)) {
      std::snprintf(buf, sizeof(buf), "recover_psnr_db=inf ssim=%.6f\n", report.rows[0].ssim);
    } else {
      std::snprintf(buf, sizeof(buf), "recover_psnr_db=%.6f ssim=%.6f\n",
                    report.rows[0].psnr_db, report.rows[0].ssim);
    }
    std::cout << buf;
  }
  return 0;
}

int cmd_eval(const std::string& ref_path, const std::string& cand_arg,
             const std::string& labels_arg, const std::string& out,
             const std::string& dump_dir) {
  const auto cands = split_list(cand_arg);
  const auto labels = labels_arg.empty() ? cands : split_list(labels_arg);
  if (cands.size() != labels.size())
    throw_usage("eval: --cand and --labels must have the same count");
  const ComplexImage reference = load_mcs(ref_path);
  std::vector<std::pair<std::string, ComplexImage>> candidates;
  for (size_t i = 0; i < cands.size(); ++i)
    candidates.emplace_back(labels[i], load_mcs(cands[i]));
  const MetricReport report = evaluate(reference, candidates);
  std::ofstream os(out);
  if (!os) throw_format("eval: cannot open " + out, FormatCode::None);
  os << report.to_csv();
  os.close();

  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    const ComplexImage ref_img =
        reference.domain == Domain::KSpace ? ifft2c(reference) : reference;
    const RealImage ref_sos = sos(ref_img);
    double peak = 0.0;
    for (double v : ref_sos.data) peak = std::max(peak, v);
    write_pgm((fs::path(dump_dir) / "reference_sos.pgm").string(), ref_sos, peak);
    for (const auto& [name, cand] : candidates) {
      const ComplexImage cand_img = cand.domain == Domain::KSpace ? ifft2c(cand) : cand;
      const RealImage cand_sos = sos(cand_img);
      write_pgm((fs::path(dump_dir) / (name + "_sos.pgm")).string(), cand_sos, peak);
      RealImage diff(cand_sos.height, cand_sos.width);
      for (size_t i = 0; i < diff.size(); ++i)
        diff.data[i] = 3.0 * std::abs(cand_sos.data[i] - ref_sos.data[i]);
      write_pgm((fs::path(dump_dir) / (name + "_diff3x.pgm")).string(), diff, peak);
    }
  }
  std::cout << report.to_csv();
  return 0;
}

int cmd_info(const std::string& in) {
  std::ifstream is(in, std::ios::binary);
  if (!is) throw_format("info: cannot open " + in, FormatCode::None);
  char magic[8] = {0};
  is.read(magic, 8);
  if (is.gcount() >= 4 && std::string(magic, 4) == "MCS1") {
    const ComplexImage img = load_mcs(in);
    std::cout << "mcs coils=" << img.coils << " height=" << img.height
              << " width=" << img.width << " domain=" << domain_name(img.domain) << "\n";
  } else if (is.gcount() >= 4 && std::string(magic, 4) == "CCM1") {
    const CompressionMatrix a = load_ccm(in);
    std::cout << "ccm mode=" << (a.mode == CompressionMode::SCC ? "scc" : "gcc")
              << " n_virtual=" << a.n_virtual << " n_physical=" << a.n_physical
              << " locations=" << a.per_location.size() << "\n";
  } else if (is.gcount() == 8 && std::string(magic, 8) == "VICC0001") {
    const FlowModel m = load_checkpoint(in);
    std::cout << "checkpoint blocks=" << m.blocks.size() << " physical=" << m.n_physical
              << " virtual=" << m.n_virtual << " groups=" << m.groups
              << " width=" << m.width << " growth=" << m.growth
              << " domain=" << domain_name(m.native_domain)
              << " params=" << param_count(m) << "\n";
  } else {
    throw_format("info: unrecognized file " + in, FormatCode::BadMagic);
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"invertible multi-coil compression toolkit"};
  app.require_subcommand(1);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic multi-coil slice");
  std::string ph_size = "64x64", ph_out;
  int ph_coils = 8;
  uint64_t ph_seed = 0;
  double ph_noise = 0.0;
  phantom->add_option("--size", ph_size, "HxW");
  phantom->add_option("--coils", ph_coils, "number of physical coils");
  phantom->add_option("--seed", ph_seed, "generator seed");
  phantom->add_option("--noise", ph_noise, "complex Gaussian noise sigma");
  phantom->add_option("--out", ph_out, "output .mcs path")->required();

  // baseline
  auto* baseline = app.add_subcommand("baseline", "classical SCC/GCC compression");
  std::string bl_method = "scc", bl_in, bl_out, bl_matrix, bl_calib = "full";
  int bl_virtual = 0;
  baseline->add_option("--method", bl_method, "scc or gcc");
  baseline->add_option("--in", bl_in, "input .mcs")->required();
  baseline->add_option("--virtual", bl_virtual, "virtual coil count")->required();
  baseline->add_option("--out", bl_out, "compressed output .mcs")->required();
  baseline->add_option("--matrix-out", bl_matrix, "write the fitted .ccm");
  baseline->add_option("--calib", bl_calib, "calibration region: full or acs");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the invertible compressor");
  std::string tr_config, tr_data, tr_out, tr_variant, tr_mask, tr_trace;
  int tr_virtual = 0;
  train_cmd->add_option("--config", tr_config, "key = value config file");
  train_cmd->add_option("--data", tr_data, "directory of .mcs slices")->required();
  train_cmd->add_option("--out", tr_out, "checkpoint path")->required();
  train_cmd->add_option("--variant", tr_variant, "loss variant: i or k");
  train_cmd->add_option("--virtual", tr_virtual, "virtual coil count")->required();
  train_cmd->add_option("--mask", tr_mask, "undersample inputs: R,acs");
  train_cmd->add_option("--trace", tr_trace, "loss trace CSV (default <out>.loss.csv)");

  // compress / recover
  auto* compress_cmd = app.add_subcommand("compress", "apply the learned forward map");
  std::string cp_model, cp_in, cp_out;
  compress_cmd->add_option("--model", cp_model, "checkpoint")->required();
  compress_cmd->add_option("--in", cp_in, "input .mcs")->required();
  compress_cmd->add_option("--out", cp_out, "output .mcs")->required();

  auto* recover_cmd = app.add_subcommand("recover", "apply the backward map");
  std::string rc_model, rc_in, rc_out, rc_ref;
  recover_cmd->add_option("--model", rc_model, "checkpoint")->required();
  recover_cmd->add_option("--in", rc_in, "compressed .mcs")->required();
  recover_cmd->add_option("--out", rc_out, "recovered .mcs")->required();
  recover_cmd->add_option("--ref", rc_ref, "reference .mcs for PSNR");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM report");
  std::string ev_ref, ev_cand, ev_labels, ev_out, ev_dump;
  eval_cmd->add_option("--ref", ev_ref, "reference .mcs")->required();
  eval_cmd->add_option("--cand", ev_cand, "comma-separated candidate .mcs list")->required();
  eval_cmd->add_option("--labels", ev_labels, "comma-separated labels");
  eval_cmd->add_option("--out", ev_out, "report CSV path")->required();
  eval_cmd->add_option("--dump-dir", ev_dump, "write sos and 3x difference PGMs");

  // info
  auto* info_cmd = app.add_subcommand("info", "describe a data/matrix/checkpoint file");
  std::string in_path;
  info_cmd->add_option("--in", in_path, "file to describe")->required();

  try {
    app.parse(argc, argv);
    if (phantom->parsed()) return cmd_phantom(ph_size, ph_coils, ph_seed, ph_noise, ph_out);
    if (baseline->parsed())
      return cmd_baseline(bl_method, bl_in, bl_virtual, bl_out, bl_matrix, bl_calib);
    if (train_cmd->parsed())
      return cmd_train(tr_config, tr_data, tr_out, tr_variant, tr_virtual, tr_mask, tr_trace);
    if (compress_cmd->parsed()) return cmd_compress(cp_model, cp_in, cp_out);
    if (recover_cmd->parsed()) return cmd_recover(rc_model, rc_in, rc_out, rc_ref);
    if (eval_cmd->parsed()) return cmd_eval(ev_ref, ev_cand, ev_labels, ev_out, ev_dump);
    if (info_cmd->parsed()) return cmd_info(in_path);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::Usage: return 2;
      case ErrorKind::Format: return 3;
      case ErrorKind::Contract: return 3;
      case ErrorKind::Numeric: return 4;
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vicc
