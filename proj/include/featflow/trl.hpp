#pragma once

#include "featflow/tensor.hpp"

namespace featflow {

// Transformation residual loss: the self-supervised training signal. The
// neighbor features are warped by the predicted flow and the element-wise
// smooth-L1 of the residual against the current features is averaged over
// all positions and channels, scaled by lambda.
struct TrlConfig {
  double lambda = 0.65;
  double delta = 1.0;  // smooth-L1 quadratic/linear crossover
  // When set, gradients into both feature maps are dropped; the flow
  // gradient is kept. Intended for ablation runs.
  bool stop_feature_grad = false;

  void validate() const;
};

// 0.5 x^2 / delta for |x| < delta, |x| - 0.5 delta otherwise. C1 at the
// crossover.
double smooth_l1(double x, double delta);
double smooth_l1_grad(double x, double delta);

// loss = lambda / (H*W*C) * sum over positions and channels of
//        smooth_l1(warp(f_j, flow) - f_i)
double trl_forward(const Tensor& f_i, const Tensor& f_j, const FlowMap& flow,
                   const TrlConfig& cfg);

// Analytic gradients through the residual and the warp. Returns the loss.
double trl_backward(const Tensor& f_i, const Tensor& f_j, const FlowMap& flow,
                    const TrlConfig& cfg, Tensor& grad_fi, Tensor& grad_fj, FlowMap& grad_flow);

}  // namespace featflow
