#include "featflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "featflow/rng.hpp"
#include "featflow/warp.hpp"

namespace featflow {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct EvalResult {
  double epe = 0.0;
  double aligned_mse = 0.0;
  double unaligned_mse = 0.0;
};

// Scores the module on every adjacent pair against the stored ground truth.
EvalResult evaluate(IffModule& module, const SynthResult& data, int border) {
  EvalResult r;
  const int pairs = static_cast<int>(data.gt_flows.size());
  for (int t = 0; t < pairs; ++t) {
    const Tensor& cur = data.frames[t + 1];
    const Tensor& nb = data.frames[t];
    const FlowMap flow = module.forward(cur, nb);
    r.epe += endpoint_error(flow, data.gt_flows[t], border);
    r.aligned_mse += interior_mse(bilinear_warp(nb, flow), cur, border);
    r.unaligned_mse += interior_mse(nb, cur, border);
  }
  r.epe /= pairs;
  r.aligned_mse /= pairs;
  r.unaligned_mse /= pairs;
  return r;
}

}  // namespace

TrainReport train_iff(IffModule& module, const SynthSpec& spec, const TrainConfig& cfg) {
  if (module.config().in_channels != spec.channels) {
    throw ShapeError("train_iff: module expects " +
                     std::to_string(module.config().in_channels) + " channels, scenario has " +
                     std::to_string(spec.channels));
  }
  cfg.trl.validate();
  const SynthResult data = generate_synthetic(spec);
  if (data.gt_flows.empty()) throw ShapeError("train_iff: scenario needs >= 2 frames");

  int border = cfg.eval_border;
  if (border < 0) {
    border = module.config().variant == IffConfig::Variant::advanced
                 ? module.config().corr.max_displacement
                 : 1;
  }

  // All ordered (current, neighbor) pairs within the sampling radius.
  std::vector<std::pair<int, int>> pairs;
  const int T = spec.num_frames;
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j < T; ++j) {
      if (j != i && std::abs(i - j) <= cfg.temporal_radius) pairs.emplace_back(i, j);
    }
  }

  TrainReport report;
  report.steps = cfg.steps;
  const EvalResult initial = evaluate(module, data, border);
  report.initial_epe = initial.epe;
  report.initial_aligned_mse = initial.aligned_mse;
  report.unaligned_mse = initial.unaligned_mse;

  Rng rng(cfg.seed);
  const int drop_at = static_cast<int>(std::ceil(0.6 * cfg.steps));
  auto params = module.params();
  for (int step = 0; step < cfg.steps; ++step) {
    const auto [i, j] = pairs[rng.index(static_cast<int>(pairs.size()))];
    const Tensor& f_i = data.frames[i];
    const Tensor& f_j = data.frames[j];

    IffTrace trace;
    const FlowMap flow = module.forward(f_i, f_j, trace);
    Tensor grad_fi, grad_fj;
    FlowMap grad_flow;
    if (!all_finite(flow)) {
      throw std::runtime_error("train_iff: flow diverged (non-finite) at step " +
                               std::to_string(step));
    }
    const double loss = trl_backward(f_i, f_j, flow, cfg.trl, grad_fi, grad_fj, grad_flow);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train_iff: loss diverged (non-finite) at step " +
                               std::to_string(step));
    }
    module.backward(trace, grad_flow);
    const double lr = step < drop_at ? cfg.lr : 0.1 * cfg.lr;
    sgd_step(params, lr);
    zero_grads(params);
    report.losses.push_back(loss);
    report.lrs.push_back(lr);
  }

  const EvalResult final_eval = cfg.steps > 0 ? evaluate(module, data, border) : initial;
  report.final_epe = final_eval.epe;
  report.final_aligned_mse = final_eval.aligned_mse;
  return report;
}

void write_train_log(std::ostream& os, const TrainReport& report) {
  os << "# initial_epe=" << fmt(report.initial_epe) << '\n';
  os << "# final_epe=" << fmt(report.final_epe) << '\n';
  os << "# initial_aligned_mse=" << fmt(report.initial_aligned_mse) << '\n';
  os << "# final_aligned_mse=" << fmt(report.final_aligned_mse) << '\n';
  os << "# unaligned_mse=" << fmt(report.unaligned_mse) << '\n';
  os << "# steps=" << report.steps << '\n';
  os << "step,loss,lr\n";
  for (size_t s = 0; s < report.losses.size(); ++s) {
    os << s << ',' << fmt(report.losses[s]) << ',' << fmt(report.lrs[s]) << '\n';
  }
}

void write_train_log_file(const std::string& path, const TrainReport& report) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open for writing: " + path);
  write_train_log(os, report);
}

TrainReport read_train_log_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open: " + path);
  TrainReport report;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const double val = std::stod(line.substr(eq + 1));
      if (key == "initial_epe") report.initial_epe = val;
      else if (key == "final_epe") report.final_epe = val;
      else if (key == "initial_aligned_mse") report.initial_aligned_mse = val;
      else if (key == "final_aligned_mse") report.final_aligned_mse = val;
      else if (key == "unaligned_mse") report.unaligned_mse = val;
      else if (key == "steps") report.steps = static_cast<int>(val);
      continue;
    }
    if (!header_seen) {  // "step,loss,lr"
      header_seen = true;
      continue;
    }
    std::istringstream ls(line);
    std::string step_s, loss_s, lr_s;
    if (std::getline(ls, step_s, ',') && std::getline(ls, loss_s, ',') &&
        std::getline(ls, lr_s)) {
      report.losses.push_back(std::stod(loss_s));
      report.lrs.push_back(std::stod(lr_s));
    } else {
      throw ParseError("train log: bad row '" + line + "'");
    }
  }
  return report;
}

void write_summary_csv(std::ostream& os, const TrainReport& report) {
  double final_loss = 0.0, min_loss = 0.0;
  if (!report.losses.empty()) {
    final_loss = report.losses.back();
    min_loss = *std::min_element(report.losses.begin(), report.losses.end());
  }
  os << "key,value\n";
  os << "steps," << report.steps << '\n';
  os << "initial_epe," << fmt(report.initial_epe) << '\n';
  os << "final_epe," << fmt(report.final_epe) << '\n';
  os << "initial_aligned_mse," << fmt(report.initial_aligned_mse) << '\n';
  os << "final_aligned_mse," << fmt(report.final_aligned_mse) << '\n';
  os << "unaligned_mse," << fmt(report.unaligned_mse) << '\n';
  os << "final_loss," << fmt(final_loss) << '\n';
  os << "min_loss," << fmt(min_loss) << '\n';
}

void write_curve_svg(std::ostream& os, const TrainReport& report) {
  const int W = 640, H = 360, ml = 50, mb = 30, mt = 15, mr = 15;
  double lo = 0.0, hi = 1.0;
  if (!report.losses.empty()) {
    lo = hi = report.losses[0];
    for (double v : report.losses) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi == lo) hi = lo + 1.0;
  }
  const int n = static_cast<int>(report.losses.size());
  char buf[128];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
     << H - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
     << "\" stroke=\"black\"/>\n";
  std::snprintf(buf, sizeof buf, "%.4g", hi);
  os << "<text x=\"4\" y=\"" << mt + 5 << "\" font-size=\"11\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.4g", lo);
  os << "<text x=\"4\" y=\"" << H - mb << "\" font-size=\"11\">" << buf << "</text>\n";
  os << "<text x=\"" << (W / 2 - 30) << "\" y=\"" << H - 8
     << "\" font-size=\"11\">training step</text>\n";
  if (n > 1) {
    os << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.2\" points=\"";
    for (int s = 0; s < n; ++s) {
      const double px = ml + (W - ml - mr) * (static_cast<double>(s) / (n - 1));
      const double py = (H - mb) - (H - mb - mt) * ((report.losses[s] - lo) / (hi - lo));
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px, py);
      os << buf;
    }
    os << "\"/>\n";
  }
  std::snprintf(buf, sizeof buf, "final EPE %.4g", report.final_epe);
  os << "<text x=\"" << W - 160 << "\" y=\"" << mt + 14 << "\" font-size=\"11\">" << buf
     << "</text>\n";
  os << "</svg>\n";
}

}  // namespace featflow
