#pragma once

#include "featflow/tensor.hpp"

namespace featflow {

// Displacement-correlation settings. Displacements range over
// {-max_displacement, -max_displacement + stride, ..., +max_displacement}
// on each axis, giving (2*max_displacement/stride + 1)^2 output channels.
struct CorrConfig {
  int max_displacement = 10;
  int stride = 2;

  int side() const { return 2 * max_displacement / stride + 1; }
  int out_channels() const { return side() * side(); }
  void validate() const;
};

// Cost volume between two equally-shaped feature maps: channel k of the
// output holds, at every position, the dot product of the f_i vector with
// the f_j vector displaced by (dx_k, dy_k), divided by the channel count.
// Channel order is row-major over displacements: dy outer, dx inner, most
// negative first. Displaced vectors outside the grid count as zero.
Tensor correlation(const Tensor& f_i, const Tensor& f_j, const CorrConfig& cfg);

void correlation_backward(const Tensor& f_i, const Tensor& f_j, const CorrConfig& cfg,
                          const Tensor& grad_out, Tensor& grad_fi, Tensor& grad_fj);

}  // namespace featflow
