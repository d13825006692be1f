#pragma once

#include <span>

#include "featflow/correlation.hpp"
#include "featflow/tensor.hpp"

namespace featflow::reference {

// Serial, definition-level implementations of the forward kernels. They are
// written straight from the operator definitions with per-tap bounds checks
// and no loop restructuring, and are kept as the comparison baseline for the
// parallel kernels in tests and in the benchmark target.

Tensor conv2d_forward(const Tensor& input, const Param& weights, const Param& bias, int pad,
                      int stride);

Tensor bilinear_warp(const Tensor& feature, const FlowMap& flow);

Tensor correlation(const Tensor& f_i, const Tensor& f_j, const CorrConfig& cfg);

Tensor aggregate(const Tensor& current, std::span<const Tensor> warped_neighbors);

}  // namespace featflow::reference
