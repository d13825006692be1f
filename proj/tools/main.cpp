#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "featflow/aggregate.hpp"
#include "featflow/correlation.hpp"
#include "featflow/gradcheck.hpp"
#include "featflow/iff.hpp"
#include "featflow/seqnms.hpp"
#include "featflow/synth.hpp"
#include "featflow/tensor.hpp"
#include "featflow/train.hpp"
#include "featflow/trl.hpp"
#include "featflow/warp.hpp"

namespace {

using namespace featflow;

// Options shared by the iff-* subcommands; mirrors IffConfig.
struct IffCliConfig {
  std::string variant = "advanced";
  int in_channels = 8;
  int mid_channels = 8;
  int fuse_channels = 4;
  int max_displacement = 2;
  int stride = 1;

  IffConfig to_config() const {
    IffConfig cfg;
    cfg.variant = parse_variant(variant);
    cfg.in_channels = in_channels;
    cfg.mid_channels = mid_channels;
    cfg.fuse_channels = fuse_channels;
    cfg.corr = CorrConfig{max_displacement, stride};
    return cfg;
  }
};

void add_iff_options(CLI::App* cmd, IffCliConfig& cfg) {
  cmd->add_option("--variant", cfg.variant, "module variant")
      ->check(CLI::IsMember({"basic", "advanced"}));
  cmd->add_option("--in-channels", cfg.in_channels, "input feature channels");
  cmd->add_option("--mid-channels", cfg.mid_channels, "embedding channels");
  cmd->add_option("--fuse-channels", cfg.fuse_channels, "fusion channels");
  cmd->add_option("--max-displacement", cfg.max_displacement, "correlation range");
  cmd->add_option("--stride", cfg.stride, "correlation stride");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open for writing: " + path);
  return os;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"featflow: feature-flow estimation, aggregation and box-sequence tools"};
  app.require_subcommand(1);
  int exit_code = 0;

  // ---- warp ----
  auto* warp_cmd = app.add_subcommand("warp", "bilinear-warp a feature map by a flow map");
  struct {
    std::string feature, flow, out;
  } warp_opt;
  warp_cmd->add_option("--feature", warp_opt.feature, "feature FTZ")->required();
  warp_cmd->add_option("--flow", warp_opt.flow, "flow FTZ (2 channels)")->required();
  warp_cmd->add_option("--out", warp_opt.out, "output FTZ")->required();
  warp_cmd->callback([&] {
    const Tensor feature = read_ftz_file(warp_opt.feature);
    const FlowMap flow = read_ftz_file(warp_opt.flow);
    write_ftz_file(warp_opt.out, bilinear_warp(feature, flow));
  });

  // ---- corr ----
  auto* corr_cmd = app.add_subcommand("corr", "displacement correlation of two feature maps");
  struct {
    std::string a, b, out;
    int max_displacement = 10;
    int stride = 2;
  } corr_opt;
  corr_cmd->add_option("--a", corr_opt.a, "current-frame FTZ")->required();
  corr_cmd->add_option("--b", corr_opt.b, "neighbor-frame FTZ")->required();
  corr_cmd->add_option("--max-displacement", corr_opt.max_displacement, "displacement range");
  corr_cmd->add_option("--stride", corr_opt.stride, "displacement stride");
  corr_cmd->add_option("--out", corr_opt.out, "output FTZ")->required();
  corr_cmd->callback([&] {
    const Tensor a = read_ftz_file(corr_opt.a);
    const Tensor b = read_ftz_file(corr_opt.b);
    const CorrConfig cfg{corr_opt.max_displacement, corr_opt.stride};
    write_ftz_file(corr_opt.out, correlation(a, b, cfg));
  });

  // ---- iff-init ----
  auto* init_cmd = app.add_subcommand("iff-init", "initialize a module checkpoint");
  IffCliConfig init_cfg;
  struct {
    uint64_t seed = 0;
    std::string out;
  } init_opt;
  add_iff_options(init_cmd, init_cfg);
  init_cmd->add_option("--seed", init_opt.seed, "parameter init seed");
  init_cmd->add_option("--out", init_opt.out, "checkpoint path")->required();
  init_cmd->callback([&] {
    IffModule module(init_cfg.to_config(), init_opt.seed);
    module.save_checkpoint(init_opt.out);
    const IffReport r = module.report();
    std::printf("conv_layers=%d skip_projections=%d parameters=%lld\n", r.conv_layers,
                r.skip_projections, r.parameter_count);
  });

  // ---- iff-forward ----
  auto* fwd_cmd = app.add_subcommand("iff-forward", "predict a flow map for a frame pair");
  IffCliConfig fwd_cfg;
  struct {
    std::string checkpoint, fi, fj, out;
  } fwd_opt;
  add_iff_options(fwd_cmd, fwd_cfg);
  fwd_cmd->add_option("--checkpoint", fwd_opt.checkpoint, "checkpoint path")->required();
  fwd_cmd->add_option("--fi", fwd_opt.fi, "current-frame FTZ")->required();
  fwd_cmd->add_option("--fj", fwd_opt.fj, "neighbor-frame FTZ")->required();
  fwd_cmd->add_option("--out", fwd_opt.out, "output flow FTZ")->required();
  fwd_cmd->callback([&] {
    IffModule module(fwd_cfg.to_config(), 0);
    module.load_checkpoint(fwd_opt.checkpoint);
    const Tensor f_i = read_ftz_file(fwd_opt.fi);
    const Tensor f_j = read_ftz_file(fwd_opt.fj);
    write_ftz_file(fwd_opt.out, module.forward(f_i, f_j));
  });

  // ---- iff-train ----
  auto* train_cmd = app.add_subcommand("iff-train", "self-supervised training on a scenario");
  IffCliConfig train_cfg;
  struct {
    std::string synth, out, log, checkpoint_in;
    uint64_t init_seed = 0;
    int steps = 500;
    double lr = 0.5;
    int temporal_radius = 10;
    uint64_t seed = 0;
    double trl_lambda = 0.65;
    double trl_delta = 1.0;
    bool stop_feature_grad = false;
  } train_opt;
  add_iff_options(train_cmd, train_cfg);
  train_cmd->add_option("--synth", train_opt.synth, "scenario spec file")->required();
  train_cmd->add_option("--out", train_opt.out, "trained checkpoint path")->required();
  train_cmd->add_option("--log", train_opt.log, "training log CSV path");
  train_cmd->add_option("--checkpoint-in", train_opt.checkpoint_in, "resume from checkpoint");
  train_cmd->add_option("--init-seed", train_opt.init_seed, "fresh-init seed");
  train_cmd->add_option("--steps", train_opt.steps, "SGD steps");
  train_cmd->add_option("--lr", train_opt.lr, "initial learning rate");
  train_cmd->add_option("--temporal-radius", train_opt.temporal_radius, "pair sampling radius");
  train_cmd->add_option("--seed", train_opt.seed, "pair sampling seed");
  train_cmd->add_option("--trl-lambda", train_opt.trl_lambda, "loss trade-off weight");
  train_cmd->add_option("--trl-delta", train_opt.trl_delta, "smooth-L1 crossover");
  train_cmd->add_flag("--stop-feature-grad", train_opt.stop_feature_grad,
                      "block loss gradients into the feature maps");
  train_cmd->callback([&] {
    IffModule module(train_cfg.to_config(), train_opt.init_seed);
    if (!train_opt.checkpoint_in.empty()) module.load_checkpoint(train_opt.checkpoint_in);
    const SynthSpec spec = parse_synth_spec_file(train_opt.synth);
    TrainConfig tc;
    tc.steps = train_opt.steps;
    tc.lr = train_opt.lr;
    tc.temporal_radius = train_opt.temporal_radius;
    tc.seed = train_opt.seed;
    tc.trl.lambda = train_opt.trl_lambda;
    tc.trl.delta = train_opt.trl_delta;
    tc.trl.stop_feature_grad = train_opt.stop_feature_grad;
    const TrainReport report = train_iff(module, spec, tc);
    module.save_checkpoint(train_opt.out);
    if (!train_opt.log.empty()) write_train_log_file(train_opt.log, report);
    std::printf("steps=%d initial_epe=%.6g final_epe=%.6g aligned_mse=%.6g unaligned_mse=%.6g\n",
                report.steps, report.initial_epe, report.final_epe, report.final_aligned_mse,
                report.unaligned_mse);
  });

  // ---- trl ----
  auto* trl_cmd = app.add_subcommand("trl", "transformation residual loss of a triple");
  struct {
    std::string fi, fj, flow;
    double lambda = 0.65;
    double delta = 1.0;
  } trl_opt;
  trl_cmd->add_option("--fi", trl_opt.fi, "current-frame FTZ")->required();
  trl_cmd->add_option("--fj", trl_opt.fj, "neighbor-frame FTZ")->required();
  trl_cmd->add_option("--flow", trl_opt.flow, "flow FTZ")->required();
  trl_cmd->add_option("--trl-lambda", trl_opt.lambda, "trade-off weight");
  trl_cmd->add_option("--trl-delta", trl_opt.delta, "smooth-L1 crossover");
  trl_cmd->callback([&] {
    TrlConfig cfg;
    cfg.lambda = trl_opt.lambda;
    cfg.delta = trl_opt.delta;
    const double loss = trl_forward(read_ftz_file(trl_opt.fi), read_ftz_file(trl_opt.fj),
                                    read_ftz_file(trl_opt.flow), cfg);
    std::printf("%.17g\n", loss);
  });

  // ---- aggregate ----
  auto* agg_cmd = app.add_subcommand("aggregate", "adaptive weighted fusion of feature maps");
  struct {
    std::string current, out;
    std::vector<std::string> neighbors;
  } agg_opt;
  agg_cmd->add_option("--current", agg_opt.current, "current-frame FTZ")->required();
  agg_cmd->add_option("--neighbor", agg_opt.neighbors, "warped neighbor FTZ (repeatable)");
  agg_cmd->add_option("--out", agg_opt.out, "output FTZ")->required();
  agg_cmd->callback([&] {
    const Tensor current = read_ftz_file(agg_opt.current);
    std::vector<Tensor> neighbors;
    for (const std::string& p : agg_opt.neighbors) neighbors.push_back(read_ftz_file(p));
    write_ftz_file(agg_opt.out, aggregate(current, neighbors));
  });

  // ---- seqnms ----
  auto* nms_cmd = app.add_subcommand("seqnms", "box-sequence linking and rescoring");
  struct {
    std::string in, out;
    std::string variant = "plus";
    std::string rescore_op = "mean";
    double link_iou = 0.5;
    double nms_iou = 0.3;
  } nms_opt;
  nms_cmd->add_option("--in", nms_opt.in, "detections JSON")->required();
  nms_cmd->add_option("--out", nms_opt.out, "output JSON")->required();
  nms_cmd->add_option("--variant", nms_opt.variant, "pipeline variant")
      ->check(CLI::IsMember({"plus", "original"}));
  nms_cmd->add_option("--rescore", nms_opt.rescore_op, "original-variant rescore operator")
      ->check(CLI::IsMember({"mean", "max"}));
  nms_cmd->add_option("--link-iou", nms_opt.link_iou, "sequence link threshold");
  nms_cmd->add_option("--nms-iou", nms_opt.nms_iou, "suppression threshold");
  nms_cmd->callback([&] {
    std::ifstream is(nms_opt.in);
    if (!is) throw ParseError("cannot open: " + nms_opt.in);
    const std::vector<Detection> dets = load_detections_json(is);
    SeqNmsConfig cfg;
    cfg.link_iou = nms_opt.link_iou;
    cfg.nms_iou = nms_opt.nms_iou;
    cfg.variant = nms_opt.variant == "plus" ? SeqNmsConfig::Variant::plus
                                            : SeqNmsConfig::Variant::original;
    cfg.rescore_op = nms_opt.rescore_op == "mean" ? SeqNmsConfig::RescoreOp::mean
                                                  : SeqNmsConfig::RescoreOp::max;
    auto os = open_out(nms_opt.out);
    save_detections_json(os, seqnms(dets, cfg));
  });

  // ---- gradcheck ----
  auto* gc_cmd = app.add_subcommand("gradcheck", "run the finite-difference suite");
  struct {
    double tol = 1e-4;
    double tol_primitive = 1e-6;
    int seeds = 20;
  } gc_opt;
  gc_cmd->add_option("--tol", gc_opt.tol, "composed-graph tolerance");
  gc_cmd->add_option("--tol-primitive", gc_opt.tol_primitive, "single-primitive tolerance");
  gc_cmd->add_option("--seeds", gc_opt.seeds, "random instances per case");
  gc_cmd->callback([&] {
    const auto cases = run_gradcheck_suite(gc_opt.seeds, gc_opt.tol_primitive, gc_opt.tol);
    bool all_pass = true;
    for (const GradCheckCase& c : cases) {
      std::printf("%-28s max_rel_err=%.3e tol=%.0e %s\n", c.name.c_str(), c.max_rel_err,
                  c.tolerance, c.pass ? "PASS" : "FAIL");
      all_pass = all_pass && c.pass;
    }
    if (!all_pass) {
      std::fprintf(stderr, "error: gradcheck tolerance breach\n");
      exit_code = 2;
    }
  });

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic scenario");
  struct {
    std::string spec, out_dir;
  } synth_opt;
  synth_cmd->add_option("--spec", synth_opt.spec, "scenario spec file")->required();
  synth_cmd->add_option("--out-dir", synth_opt.out_dir, "output directory")->required();
  synth_cmd->callback([&] {
    const SynthSpec spec = parse_synth_spec_file(synth_opt.spec);
    const SynthResult data = generate_synthetic(spec);
    char name[64];
    for (size_t t = 0; t < data.frames.size(); ++t) {
      std::snprintf(name, sizeof name, "/frame_%04zu.ftz", t);
      write_ftz_file(synth_opt.out_dir + name, data.frames[t]);
    }
    for (size_t t = 0; t < data.gt_flows.size(); ++t) {
      std::snprintf(name, sizeof name, "/flow_%04zu.ftz", t);
      write_ftz_file(synth_opt.out_dir + name, data.gt_flows[t]);
    }
    std::printf("frames=%zu flows=%zu\n", data.frames.size(), data.gt_flows.size());
  });

  // ---- report ----
  auto* report_cmd = app.add_subcommand("report", "summarize a training log");
  struct {
    std::string log, out_csv, out_svg;
  } report_opt;
  report_cmd->add_option("--log", report_opt.log, "training log CSV")->required();
  report_cmd->add_option("--out-csv", report_opt.out_csv, "summary CSV path");
  report_cmd->add_option("--out-svg", report_opt.out_svg, "loss-curve SVG path");
  report_cmd->callback([&] {
    const TrainReport report = read_train_log_file(report_opt.log);
    if (!report_opt.out_csv.empty()) {
      auto os = open_out(report_opt.out_csv);
      write_summary_csv(os, report);
    }
    if (!report_opt.out_svg.empty()) {
      auto os = open_out(report_opt.out_svg);
      write_curve_svg(os, report);
    }
    std::printf("steps=%d final_epe=%.6g\n", report.steps, report.final_epe);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return exit_code;
}
