#pragma once

#include "featflow/tensor.hpp"

namespace featflow {

// Backward-warping bilinear sampler: output(c, y, x) is the bilinear sample
// of feature channel c at (x + flow_dx(y,x), y + flow_dy(y,x)). Samples whose
// support falls outside the grid read zero. Output shape equals the feature
// shape.
Tensor bilinear_warp(const Tensor& feature, const FlowMap& flow);

// Analytic gradients of the sampler w.r.t. the source feature and the flow.
// At exact integer sample coordinates the subgradient of the floor-anchored
// cell is used.
void bilinear_warp_backward(const Tensor& feature, const FlowMap& flow, const Tensor& grad_out,
                            Tensor& grad_feature, FlowMap& grad_flow);

// Smallest distance of any flow entry to the integer lattice. Sample
// coordinates sit on interpolation-cell boundaries exactly when this is 0;
// finite-difference checks reject instances where it is below the step size.
double min_integer_distance(const FlowMap& flow);

}  // namespace featflow
