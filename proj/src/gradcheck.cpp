#include "featflow/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace featflow {

double grad_check(const std::function<double()>& eval, std::span<double> coords,
                  std::span<const double> analytic, double step) {
  if (coords.size() != analytic.size()) {
    throw std::invalid_argument("grad_check: coordinate/gradient size mismatch");
  }
  double worst = 0.0;
  for (size_t i = 0; i < coords.size(); ++i) {
    const double saved = coords[i];
    coords[i] = saved + step;
    const double up = eval();
    coords[i] = saved - step;
    const double down = eval();
    coords[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("grad_check: non-finite evaluation");
    }
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
    const double rel = std::fabs(analytic[i] - numeric) / denom;
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace featflow
