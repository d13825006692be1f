#include "featflow/trl.hpp"

#include <cmath>

#include "featflow/warp.hpp"

namespace featflow {

void TrlConfig::validate() const {
  if (lambda < 0.0) throw ShapeError("trl: lambda must be >= 0");
  if (delta <= 0.0) throw ShapeError("trl: delta must be > 0");
}

double smooth_l1(double x, double delta) {
  const double a = std::fabs(x);
  return a < delta ? 0.5 * x * x / delta : a - 0.5 * delta;
}

double smooth_l1_grad(double x, double delta) {
  if (std::fabs(x) < delta) return x / delta;
  return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
}

double trl_forward(const Tensor& f_i, const Tensor& f_j, const FlowMap& flow,
                   const TrlConfig& cfg) {
  cfg.validate();
  require_same_shape(f_i, f_j, "trl_forward");
  require_flow_for(flow, f_j, "trl_forward");
  const Tensor warped = bilinear_warp(f_j, flow);

  // Per-row partials summed in a fixed order keep the value thread-count
  // independent.
  const int rows = f_i.channels * f_i.height;
  std::vector<double> partial(rows, 0.0);
#pragma omp parallel for
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const int base = r * f_i.width;
    for (int x = 0; x < f_i.width; ++x) {
      acc += smooth_l1(warped.data[base + x] - f_i.data[base + x], cfg.delta);
    }
    partial[r] = acc;
  }
  double total = 0.0;
  for (double v : partial) total += v;
  // lambda multiplies last so scaling lambda scales the loss exactly
  return cfg.lambda * (total / static_cast<double>(f_i.size()));
}

double trl_backward(const Tensor& f_i, const Tensor& f_j, const FlowMap& flow,
                    const TrlConfig& cfg, Tensor& grad_fi, Tensor& grad_fj, FlowMap& grad_flow) {
  cfg.validate();
  require_same_shape(f_i, f_j, "trl_backward");
  require_flow_for(flow, f_j, "trl_backward");
  const Tensor warped = bilinear_warp(f_j, flow);
  const double scale = cfg.lambda / static_cast<double>(f_i.size());

  Tensor grad_warped(f_i.channels, f_i.height, f_i.width);
  grad_fi = Tensor(f_i.channels, f_i.height, f_i.width);
  const int rows = f_i.channels * f_i.height;
  std::vector<double> partial(rows, 0.0);
#pragma omp parallel for
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const int base = r * f_i.width;
    for (int x = 0; x < f_i.width; ++x) {
      const double res = warped.data[base + x] - f_i.data[base + x];
      acc += smooth_l1(res, cfg.delta);
      const double g = scale * smooth_l1_grad(res, cfg.delta);
      grad_warped.data[base + x] = g;
      grad_fi.data[base + x] = -g;
    }
    partial[r] = acc;
  }
  double total = 0.0;
  for (double v : partial) total += v;

  bilinear_warp_backward(f_j, flow, grad_warped, grad_fj, grad_flow);
  if (cfg.stop_feature_grad) {
    std::fill(grad_fi.data.begin(), grad_fi.data.end(), 0.0);
    std::fill(grad_fj.data.begin(), grad_fj.data.end(), 0.0);
  }
  return cfg.lambda * (total / static_cast<double>(f_i.size()));
}

}  // namespace featflow
