#include "featflow/warp.hpp"

#include <cmath>

namespace featflow {

namespace {

inline bool in_grid(int x, int y, int w, int h) { return x >= 0 && x < w && y >= 0 && y < h; }

}  // namespace

Tensor bilinear_warp(const Tensor& feature, const FlowMap& flow) {
  require_flow_for(flow, feature, "bilinear_warp");
  const int C = feature.channels, H = feature.height, W = feature.width;
  Tensor out(C, H, W);

#pragma omp parallel for collapse(2)
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double sx = x + flow.at(0, y, x);
        const double sy = y + flow.at(1, y, x);
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0;
        const double fy = sy - y0;
        const double v00 = in_grid(x0, y0, W, H) ? feature.at(c, y0, x0) : 0.0;
        const double v01 = in_grid(x0 + 1, y0, W, H) ? feature.at(c, y0, x0 + 1) : 0.0;
        const double v10 = in_grid(x0, y0 + 1, W, H) ? feature.at(c, y0 + 1, x0) : 0.0;
        const double v11 = in_grid(x0 + 1, y0 + 1, W, H) ? feature.at(c, y0 + 1, x0 + 1) : 0.0;
        out.at(c, y, x) = v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx +
                          v10 * fy * (1.0 - fx) + v11 * fy * fx;
      }
    }
  }
  return out;
}

void bilinear_warp_backward(const Tensor& feature, const FlowMap& flow, const Tensor& grad_out,
                            Tensor& grad_feature, FlowMap& grad_flow) {
  require_flow_for(flow, feature, "bilinear_warp_backward");
  require_same_shape(grad_out, feature, "bilinear_warp_backward");
  const int C = feature.channels, H = feature.height, W = feature.width;
  grad_feature = Tensor(C, H, W);
  grad_flow = FlowMap(2, H, W);

  // Feature gradient scatters into up to 4 cells per output position; the
  // scatter stays within one channel plane, so parallelizing over channels
  // keeps writes disjoint and results thread-count independent.
#pragma omp parallel for
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double g = grad_out.at(c, y, x);
        if (g == 0.0) continue;
        const double sx = x + flow.at(0, y, x);
        const double sy = y + flow.at(1, y, x);
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0;
        const double fy = sy - y0;
        if (in_grid(x0, y0, W, H)) grad_feature.at(c, y0, x0) += g * (1.0 - fy) * (1.0 - fx);
        if (in_grid(x0 + 1, y0, W, H)) grad_feature.at(c, y0, x0 + 1) += g * (1.0 - fy) * fx;
        if (in_grid(x0, y0 + 1, W, H)) grad_feature.at(c, y0 + 1, x0) += g * fy * (1.0 - fx);
        if (in_grid(x0 + 1, y0 + 1, W, H)) grad_feature.at(c, y0 + 1, x0 + 1) += g * fy * fx;
      }
    }
  }

  // Flow gradient is a per-position gather over channels.
#pragma omp parallel for
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double sx = x + flow.at(0, y, x);
      const double sy = y + flow.at(1, y, x);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      double gx = 0.0, gy = 0.0;
      for (int c = 0; c < C; ++c) {
        const double g = grad_out.at(c, y, x);
        if (g == 0.0) continue;
        const double v00 = in_grid(x0, y0, W, H) ? feature.at(c, y0, x0) : 0.0;
        const double v01 = in_grid(x0 + 1, y0, W, H) ? feature.at(c, y0, x0 + 1) : 0.0;
        const double v10 = in_grid(x0, y0 + 1, W, H) ? feature.at(c, y0 + 1, x0) : 0.0;
        const double v11 = in_grid(x0 + 1, y0 + 1, W, H) ? feature.at(c, y0 + 1, x0 + 1) : 0.0;
        gx += g * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
        gy += g * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
      }
      grad_flow.at(0, y, x) = gx;
      grad_flow.at(1, y, x) = gy;
    }
  }
}

double min_integer_distance(const FlowMap& flow) {
  double best = 1.0;
  for (double v : flow.data) {
    const double d = std::fabs(v - std::round(v));
    if (d < best) best = d;
  }
  return best;
}

}  // namespace featflow
