#pragma once

#include "featflow/tensor.hpp"

namespace featflow {

// 2-D convolution (cross-correlation, no kernel flip). weights.shape is
// {out, in, kh, kw}, bias.shape is {out}. Output spatial dims follow
//   out = (in + 2*pad - k) / stride + 1.
// Out-of-bounds taps read zero. Each output element is accumulated in a
// fixed serial order, so results are identical for any thread count.
Tensor conv2d_forward(const Tensor& input, const Param& weights, const Param& bias, int pad,
                      int stride);

// Accumulates weight/bias gradients into the params and, if grad_input is
// non-null, writes the input gradient (gather formulation; no atomics).
void conv2d_backward(const Tensor& input, Param& weights, Param& bias, const Tensor& grad_out,
                     int pad, int stride, Tensor* grad_input);

// Flat index into a {out, in, kh, kw} weight array.
inline int weight_idx(const Param& w, int o, int i, int ky, int kx) {
  return ((o * w.shape[1] + i) * w.shape[2] + ky) * w.shape[3] + kx;
}

}  // namespace featflow
