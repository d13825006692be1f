#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace featflow {

// Central-difference gradient verification.
//
// For every coordinate x[i], evaluates (f(x+h e_i) - f(x-h e_i)) / 2h and
// compares against analytic[i] using
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
// Returns the maximum of that ratio over the block. `coords` is mutated
// during the sweep and restored before returning. Throws if any evaluation
// is non-finite.
double grad_check(const std::function<double()>& eval, std::span<double> coords,
                  std::span<const double> analytic, double step = 1e-5);

// One entry of the finite-difference suite.
struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Runs finite-difference checks for every differentiable operation (single
// primitives, residual blocks, both module variants composed with the
// training loss, and the aggregation) over `seeds` random instances each.
// Single primitives are held to tol_primitive, composed graphs to tol_graph.
std::vector<GradCheckCase> run_gradcheck_suite(int seeds, double tol_primitive,
                                               double tol_graph);

}  // namespace featflow
