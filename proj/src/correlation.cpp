#include "featflow/correlation.hpp"

#include <string>

namespace featflow {

void CorrConfig::validate() const {
  if (stride < 1) throw ShapeError("correlation: stride must be >= 1");
  if (max_displacement < 0) throw ShapeError("correlation: max_displacement must be >= 0");
  if (max_displacement % stride != 0) {
    throw ShapeError("correlation: max_displacement " + std::to_string(max_displacement) +
                     " not divisible by stride " + std::to_string(stride));
  }
}

Tensor correlation(const Tensor& f_i, const Tensor& f_j, const CorrConfig& cfg) {
  cfg.validate();
  require_same_shape(f_i, f_j, "correlation");
  const int C = f_i.channels, H = f_i.height, W = f_i.width;
  const int side = cfg.side();
  const double inv_c = 1.0 / C;
  Tensor out(cfg.out_channels(), H, W);

#pragma omp parallel for
  for (int k = 0; k < side * side; ++k) {
    const int dy = -cfg.max_displacement + (k / side) * cfg.stride;
    const int dx = -cfg.max_displacement + (k % side) * cfg.stride;
    for (int y = 0; y < H; ++y) {
      const int yj = y + dy;
      if (yj < 0 || yj >= H) continue;  // row left zero
      for (int x = 0; x < W; ++x) {
        const int xj = x + dx;
        if (xj < 0 || xj >= W) continue;
        double acc = 0.0;
        for (int c = 0; c < C; ++c) {
          acc += f_i.at(c, y, x) * f_j.at(c, yj, xj);
        }
        out.at(k, y, x) = acc * inv_c;
      }
    }
  }
  return out;
}

void correlation_backward(const Tensor& f_i, const Tensor& f_j, const CorrConfig& cfg,
                          const Tensor& grad_out, Tensor& grad_fi, Tensor& grad_fj) {
  cfg.validate();
  require_same_shape(f_i, f_j, "correlation_backward");
  const int C = f_i.channels, H = f_i.height, W = f_i.width;
  const int side = cfg.side();
  if (grad_out.channels != cfg.out_channels() || grad_out.height != H || grad_out.width != W) {
    throw ShapeError("correlation_backward: grad_out " + grad_out.shape_str() + " expected " +
                     std::to_string(cfg.out_channels()) + "x" + std::to_string(H) + "x" +
                     std::to_string(W));
  }
  const double inv_c = 1.0 / C;
  grad_fi = Tensor(C, H, W);
  grad_fj = Tensor(C, H, W);

  // Both gradients are written as gathers over displacement channels so each
  // output element belongs to exactly one thread.
#pragma omp parallel for
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int k = 0; k < side * side; ++k) {
        const int dy = -cfg.max_displacement + (k / side) * cfg.stride;
        const int dx = -cfg.max_displacement + (k % side) * cfg.stride;

        // d out(k, y, x) / d f_i(c, y, x) = f_j(c, y+dy, x+dx) / C
        const int yj = y + dy, xj = x + dx;
        if (yj >= 0 && yj < H && xj >= 0 && xj < W) {
          const double g = grad_out.at(k, y, x) * inv_c;
          if (g != 0.0) {
            for (int c = 0; c < C; ++c) grad_fi.at(c, y, x) += g * f_j.at(c, yj, xj);
          }
        }

        // d out(k, y-dy, x-dx) / d f_j(c, y, x) = f_i(c, y-dy, x-dx) / C
        const int yi = y - dy, xi = x - dx;
        if (yi >= 0 && yi < H && xi >= 0 && xi < W) {
          const double g = grad_out.at(k, yi, xi) * inv_c;
          if (g != 0.0) {
            for (int c = 0; c < C; ++c) grad_fj.at(c, y, x) += g * f_i.at(c, yi, xi);
          }
        }
      }
    }
  }
}

}  // namespace featflow
