#include "featflow/aggregate.hpp"

#include <cmath>

namespace featflow {

namespace {

void check_members(const Tensor& current, std::span<const Tensor> neighbors, const char* op) {
  for (const Tensor& nb : neighbors) require_same_shape(current, nb, op);
}

// Similarities then max-shifted softmax at one position. norms[k] holds the
// L2 norm of member k's vector, sims/weights are sized 1 + #neighbors.
void weights_at(const Tensor& current, std::span<const Tensor> neighbors, int y, int x,
                std::vector<double>& norms, std::vector<double>& sims,
                std::vector<double>& weights) {
  const int C = current.channels;
  const int members = 1 + static_cast<int>(neighbors.size());
  norms.assign(members, 0.0);
  sims.assign(members, 0.0);
  weights.assign(members, 0.0);

  double cur_sq = 0.0;
  for (int c = 0; c < C; ++c) cur_sq += current.at(c, y, x) * current.at(c, y, x);
  norms[0] = std::sqrt(cur_sq);
  sims[0] = 1.0;
  for (int m = 1; m < members; ++m) {
    const Tensor& nb = neighbors[m - 1];
    double dot = 0.0, nb_sq = 0.0;
    for (int c = 0; c < C; ++c) {
      dot += current.at(c, y, x) * nb.at(c, y, x);
      nb_sq += nb.at(c, y, x) * nb.at(c, y, x);
    }
    norms[m] = std::sqrt(nb_sq);
    sims[m] = (norms[0] == 0.0 || norms[m] == 0.0) ? 0.0 : dot / (norms[0] * norms[m]);
  }

  double max_sim = sims[0];
  for (double s : sims) max_sim = std::max(max_sim, s);
  double z = 0.0;
  for (int m = 0; m < members; ++m) {
    weights[m] = std::exp(sims[m] - max_sim);
    z += weights[m];
  }
  for (int m = 0; m < members; ++m) weights[m] /= z;
}

}  // namespace

std::vector<Tensor> adaptive_weights(const Tensor& current,
                                     std::span<const Tensor> warped_neighbors) {
  check_members(current, warped_neighbors, "adaptive_weights");
  const int H = current.height, W = current.width;
  const int members = 1 + static_cast<int>(warped_neighbors.size());
  std::vector<Tensor> maps(members, Tensor(1, H, W));

#pragma omp parallel for
  for (int y = 0; y < H; ++y) {
    std::vector<double> norms, sims, weights;
    for (int x = 0; x < W; ++x) {
      weights_at(current, warped_neighbors, y, x, norms, sims, weights);
      for (int m = 0; m < members; ++m) maps[m].at(0, y, x) = weights[m];
    }
  }
  return maps;
}

Tensor aggregate(const Tensor& current, std::span<const Tensor> warped_neighbors) {
  check_members(current, warped_neighbors, "aggregate");
  const int C = current.channels, H = current.height, W = current.width;
  const int members = 1 + static_cast<int>(warped_neighbors.size());
  Tensor out(C, H, W);

#pragma omp parallel for
  for (int y = 0; y < H; ++y) {
    std::vector<double> norms, sims, weights;
    for (int x = 0; x < W; ++x) {
      weights_at(current, warped_neighbors, y, x, norms, sims, weights);
      for (int c = 0; c < C; ++c) {
        double acc = weights[0] * current.at(c, y, x);
        for (int m = 1; m < members; ++m) {
          acc += weights[m] * warped_neighbors[m - 1].at(c, y, x);
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

void aggregate_backward(const Tensor& current, std::span<const Tensor> warped_neighbors,
                        const Tensor& grad_out, Tensor& grad_current,
                        std::vector<Tensor>& grad_neighbors) {
  check_members(current, warped_neighbors, "aggregate_backward");
  require_same_shape(current, grad_out, "aggregate_backward");
  const int C = current.channels, H = current.height, W = current.width;
  const int members = 1 + static_cast<int>(warped_neighbors.size());
  grad_current = Tensor(C, H, W);
  grad_neighbors.assign(warped_neighbors.size(), Tensor(C, H, W));

  auto member_at = [&](int m, int c, int y, int x) -> double {
    return m == 0 ? current.at(c, y, x) : warped_neighbors[m - 1].at(c, y, x);
  };

#pragma omp parallel for
  for (int y = 0; y < H; ++y) {
    std::vector<double> norms, sims, weights, gw(members), gs(members);
    for (int x = 0; x < W; ++x) {
      weights_at(current, warped_neighbors, y, x, norms, sims, weights);

      // dL/dw_m = <g, m-th member vector>
      double dot_wg = 0.0;
      for (int m = 0; m < members; ++m) {
        double acc = 0.0;
        for (int c = 0; c < C; ++c) acc += grad_out.at(c, y, x) * member_at(m, c, y, x);
        gw[m] = acc;
        dot_wg += weights[m] * acc;
      }
      // softmax jacobian: dL/ds_m = w_m (gw_m - sum_j w_j gw_j)
      for (int m = 0; m < members; ++m) gs[m] = weights[m] * (gw[m] - dot_wg);

      // direct path: out depends linearly on each member through its weight
      for (int c = 0; c < C; ++c) {
        grad_current.at(c, y, x) += weights[0] * grad_out.at(c, y, x);
      }
      for (int m = 1; m < members; ++m) {
        for (int c = 0; c < C; ++c) {
          grad_neighbors[m - 1].at(c, y, x) += weights[m] * grad_out.at(c, y, x);
        }
      }

      // similarity path; s_0 is the constant 1 and zero-norm similarities are
      // locally constant, so both contribute nothing
      for (int m = 1; m < members; ++m) {
        if (norms[0] == 0.0 || norms[m] == 0.0 || gs[m] == 0.0) continue;
        const double inv_prod = 1.0 / (norms[0] * norms[m]);
        const double inv_cur_sq = 1.0 / (norms[0] * norms[0]);
        const double inv_nb_sq = 1.0 / (norms[m] * norms[m]);
        for (int c = 0; c < C; ++c) {
          const double cur_v = current.at(c, y, x);
          const double nb_v = member_at(m, c, y, x);
          grad_current.at(c, y, x) += gs[m] * (nb_v * inv_prod - sims[m] * cur_v * inv_cur_sq);
          grad_neighbors[m - 1].at(c, y, x) +=
              gs[m] * (cur_v * inv_prod - sims[m] * nb_v * inv_nb_sq);
        }
      }
    }
  }
}

}  // namespace featflow
