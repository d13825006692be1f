#include "featflow/reference.hpp"

#include <cmath>
#include <vector>

#include "featflow/conv.hpp"

namespace featflow::reference {

Tensor conv2d_forward(const Tensor& input, const Param& weights, const Param& bias, int pad,
                      int stride) {
  const int out_c = weights.shape[0], in_c = weights.shape[1];
  const int kh = weights.shape[2], kw = weights.shape[3];
  const int out_h = (input.height + 2 * pad - kh) / stride + 1;
  const int out_w = (input.width + 2 * pad - kw) / stride + 1;
  Tensor out(out_c, out_h, out_w);
  for (int o = 0; o < out_c; ++o)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = bias.value[o];
        for (int i = 0; i < in_c; ++i)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride + ky - pad;
              const int ix = ox * stride + kx - pad;
              if (iy >= 0 && iy < input.height && ix >= 0 && ix < input.width) {
                acc += input.at(i, iy, ix) * weights.value[weight_idx(weights, o, i, ky, kx)];
              }
            }
        out.at(o, oy, ox) = acc;
      }
  return out;
}

Tensor bilinear_warp(const Tensor& feature, const FlowMap& flow) {
  const int C = feature.channels, H = feature.height, W = feature.width;
  auto sample = [&](int c, int y, int x) -> double {
    if (x < 0 || x >= W || y < 0 || y >= H) return 0.0;
    return feature.at(c, y, x);
  };
  Tensor out(C, H, W);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double sx = x + flow.at(0, y, x);
        const double sy = y + flow.at(1, y, x);
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        out.at(c, y, x) = (1 - fy) * ((1 - fx) * sample(c, y0, x0) + fx * sample(c, y0, x0 + 1)) +
                          fy * ((1 - fx) * sample(c, y0 + 1, x0) + fx * sample(c, y0 + 1, x0 + 1));
      }
  return out;
}

Tensor correlation(const Tensor& f_i, const Tensor& f_j, const CorrConfig& cfg) {
  const int C = f_i.channels, H = f_i.height, W = f_i.width;
  const int d = cfg.max_displacement, s = cfg.stride;
  Tensor out(cfg.out_channels(), H, W);
  int k = 0;
  for (int dy = -d; dy <= d; dy += s)
    for (int dx = -d; dx <= d; dx += s, ++k)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double dot = 0.0;
          for (int c = 0; c < C; ++c) {
            const int yj = y + dy, xj = x + dx;
            const double vj =
                (yj >= 0 && yj < H && xj >= 0 && xj < W) ? f_j.at(c, yj, xj) : 0.0;
            dot += f_i.at(c, y, x) * vj;
          }
          out.at(k, y, x) = dot / C;
        }
  return out;
}

Tensor aggregate(const Tensor& current, std::span<const Tensor> warped_neighbors) {
  const int C = current.channels, H = current.height, W = current.width;
  const int members = 1 + static_cast<int>(warped_neighbors.size());
  Tensor out(C, H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::vector<double> sim(members);
      sim[0] = 1.0;
      double cur_norm = 0.0;
      for (int c = 0; c < C; ++c) cur_norm += current.at(c, y, x) * current.at(c, y, x);
      cur_norm = std::sqrt(cur_norm);
      for (int m = 1; m < members; ++m) {
        const Tensor& nb = warped_neighbors[m - 1];
        double dot = 0.0, nb_norm = 0.0;
        for (int c = 0; c < C; ++c) {
          dot += current.at(c, y, x) * nb.at(c, y, x);
          nb_norm += nb.at(c, y, x) * nb.at(c, y, x);
        }
        nb_norm = std::sqrt(nb_norm);
        sim[m] = (cur_norm == 0.0 || nb_norm == 0.0) ? 0.0 : dot / (cur_norm * nb_norm);
      }
      double max_sim = sim[0];
      for (double v : sim) max_sim = std::max(max_sim, v);
      double z = 0.0;
      std::vector<double> w(members);
      for (int m = 0; m < members; ++m) {
        w[m] = std::exp(sim[m] - max_sim);
        z += w[m];
      }
      for (int c = 0; c < C; ++c) {
        double acc = w[0] / z * current.at(c, y, x);
        for (int m = 1; m < members; ++m) {
          acc += w[m] / z * warped_neighbors[m - 1].at(c, y, x);
        }
        out.at(c, y, x) = acc;
      }
    }
  return out;
}

}  // namespace featflow::reference
