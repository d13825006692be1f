#include <algorithm>
#include <cmath>
#include <functional>

#include "featflow/aggregate.hpp"
#include "featflow/conv.hpp"
#include "featflow/correlation.hpp"
#include "featflow/gradcheck.hpp"
#include "featflow/iff.hpp"
#include "featflow/rng.hpp"
#include "featflow/trl.hpp"
#include "featflow/warp.hpp"

// The finite-difference suite. Every case builds a random instance from the
// seed, computes analytic gradients once, and sweeps central differences
// over every coordinate. Instances whose ReLU pre-activations or warp sample
// coordinates sit within kMargin of a kink are rejected and redrawn, since
// the comparison is only valid where the graph is differentiable.

namespace featflow {

namespace {

constexpr double kMargin = 1e-4;
constexpr int kMaxDraws = 64;

Tensor random_tensor(Rng& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor t(c, h, w);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Flow entries with fractional part in [0.2, 0.8] and magnitude < 1.8, so
// sample coordinates stay clear of the interpolation lattice.
FlowMap random_offgrid_flow(Rng& rng, int h, int w) {
  FlowMap f(2, h, w);
  for (double& v : f.data) {
    const double mag = rng.index(2) == 0 ? 0.0 : 1.0;
    const double frac = rng.uniform(0.2, 0.8);
    v = (rng.index(2) == 0 ? 1.0 : -1.0) * (mag + frac);
  }
  return f;
}

void fill_params(Rng& rng, std::vector<Param*> params, double lo = -0.5, double hi = 0.5) {
  for (Param* p : params) {
    for (double& v : p->value) v = rng.uniform(lo, hi);
  }
}

double dot_all(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

// max over blocks of grad_check; blocks pair live coordinates with their
// analytic gradients
struct Block {
  std::span<double> coords;
  std::span<const double> analytic;
};

double check_blocks(const std::function<double()>& eval, const std::vector<Block>& blocks) {
  double worst = 0.0;
  for (const Block& b : blocks) {
    worst = std::max(worst, grad_check(eval, b.coords, b.analytic));
  }
  return worst;
}

double check_conv(uint64_t seed, int kernel, int stride) {
  Rng rng(seed);
  const int pad = (kernel - 1) / 2;
  Tensor input = random_tensor(rng, 3, 5, 5);
  Param w("w", {4, 3, kernel, kernel});
  Param b("b", {4});
  fill_params(rng, {&w, &b});
  const Tensor probe = random_tensor(rng, 4, (5 + 2 * pad - kernel) / stride + 1,
                                     (5 + 2 * pad - kernel) / stride + 1);

  Tensor grad_input;
  conv2d_backward(input, w, b, probe, pad, stride, &grad_input);
  auto eval = [&] { return dot_all(conv2d_forward(input, w, b, pad, stride), probe); };
  return check_blocks(eval, {{input.data, grad_input.data},
                             {w.value, w.grad},
                             {b.value, b.grad}});
}

double check_warp(uint64_t seed) {
  Rng rng(seed);
  Tensor feature = random_tensor(rng, 3, 6, 6);
  FlowMap flow = random_offgrid_flow(rng, 6, 6);
  const Tensor probe = random_tensor(rng, 3, 6, 6);

  Tensor grad_feature;
  FlowMap grad_flow;
  bilinear_warp_backward(feature, flow, probe, grad_feature, grad_flow);
  auto eval = [&] { return dot_all(bilinear_warp(feature, flow), probe); };
  return check_blocks(eval, {{feature.data, grad_feature.data}, {flow.data, grad_flow.data}});
}

double check_correlation(uint64_t seed, int stride) {
  Rng rng(seed);
  const CorrConfig cfg{2, stride};
  Tensor f_i = random_tensor(rng, 4, 6, 6);
  Tensor f_j = random_tensor(rng, 4, 6, 6);
  const Tensor probe = random_tensor(rng, cfg.out_channels(), 6, 6);

  Tensor grad_fi, grad_fj;
  correlation_backward(f_i, f_j, cfg, probe, grad_fi, grad_fj);
  auto eval = [&] { return dot_all(correlation(f_i, f_j, cfg), probe); };
  return check_blocks(eval, {{f_i.data, grad_fi.data}, {f_j.data, grad_fj.data}});
}

double min_abs_of(const Tensor& t) {
  double best = 1e300;
  for (double v : t.data) best = std::min(best, std::fabs(v));
  return best;
}

double check_eb_block(uint64_t seed, int in_c, int out_c) {
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    Rng rng(seed + 0x9e3779b9u * static_cast<uint64_t>(attempt + 1));
    EbBlock eb("eb", in_c, out_c);
    std::vector<Param*> params;
    eb.collect(params);
    fill_params(rng, params);
    Tensor input = random_tensor(rng, in_c, 5, 5);
    const Tensor probe = random_tensor(rng, out_c, 5, 5);

    EbBlock::Trace trace;
    eb.forward(input, &trace);
    if (std::min({min_abs_of(trace.pre1), min_abs_of(trace.pre2), min_abs_of(trace.sum)}) <
        kMargin) {
      continue;
    }
    const Tensor grad_input = eb.backward(trace, probe);
    auto eval = [&] { return dot_all(eb.forward(input, nullptr), probe); };
    std::vector<Block> blocks{{input.data, grad_input.data}};
    for (Param* p : params) blocks.push_back({p->value, p->grad});
    return check_blocks(eval, blocks);
  }
  throw std::runtime_error("check_eb_block: no well-separated instance found");
}

IffConfig toy_config(IffConfig::Variant variant) {
  IffConfig cfg;
  cfg.variant = variant;
  cfg.in_channels = 4;
  cfg.mid_channels = 4;
  cfg.fuse_channels = 3;
  cfg.corr = CorrConfig{1, 1};
  return cfg;
}

// Whole module graph under a quadratic head loss L = 0.5 * sum(flow^2).
// Params (biases included) are redrawn from a continuous distribution: with
// the training init's zero biases, a position whose activations all die
// leaves the next pre-activation exactly zero, which no draw could clear of
// the kink margin.
double check_iff_graph(uint64_t seed, IffConfig::Variant variant) {
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    const uint64_t s = seed + 0x9e3779b9u * static_cast<uint64_t>(attempt + 1);
    Rng rng(s);
    IffModule module(toy_config(variant), s);
    fill_params(rng, module.params());
    Tensor f_i = random_tensor(rng, 4, 5, 5);
    Tensor f_j = random_tensor(rng, 4, 5, 5);

    IffTrace trace;
    const FlowMap flow = module.forward(f_i, f_j, trace);
    if (min_relu_preact(trace, variant) < kMargin) continue;

    zero_grads(module.params());
    Tensor grad_fi, grad_fj;
    module.backward(trace, flow, &grad_fi, &grad_fj);
    auto eval = [&] {
      const FlowMap out = module.forward(f_i, f_j);
      return 0.5 * dot_all(out, out);
    };
    std::vector<Block> blocks{{f_i.data, grad_fi.data}, {f_j.data, grad_fj.data}};
    for (Param* p : module.params()) blocks.push_back({p->value, p->grad});
    return check_blocks(eval, blocks);
  }
  throw std::runtime_error("check_iff_graph: no well-separated instance found");
}

// Module composed with the training loss, gradients w.r.t. params and both
// feature maps.
double check_iff_trl(uint64_t seed, IffConfig::Variant variant) {
  const TrlConfig trl_cfg;  // default lambda/delta
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    const uint64_t s = seed + 0x9e3779b9u * static_cast<uint64_t>(attempt + 1);
    Rng rng(s);
    IffModule module(toy_config(variant), s);
    Tensor f_i = random_tensor(rng, 4, 5, 5);
    Tensor f_j = random_tensor(rng, 4, 5, 5);

    IffTrace trace;
    const FlowMap flow = module.forward(f_i, f_j, trace);
    if (min_relu_preact(trace, variant) < kMargin) continue;
    if (min_integer_distance(flow) < kMargin) continue;

    zero_grads(module.params());
    Tensor gfi_trl, gfj_trl;
    FlowMap grad_flow;
    trl_backward(f_i, f_j, flow, trl_cfg, gfi_trl, gfj_trl, grad_flow);
    Tensor gfi_mod, gfj_mod;
    module.backward(trace, grad_flow, &gfi_mod, &gfj_mod);
    const Tensor grad_fi = add_elementwise(gfi_trl, gfi_mod);
    const Tensor grad_fj = add_elementwise(gfj_trl, gfj_mod);

    auto eval = [&] { return trl_forward(f_i, f_j, module.forward(f_i, f_j), trl_cfg); };
    std::vector<Block> blocks{{f_i.data, grad_fi.data}, {f_j.data, grad_fj.data}};
    for (Param* p : module.params()) blocks.push_back({p->value, p->grad});
    return check_blocks(eval, blocks);
  }
  throw std::runtime_error("check_iff_trl: no well-separated instance found");
}

double check_trl(uint64_t seed) {
  Rng rng(seed);
  const TrlConfig cfg;
  Tensor f_i = random_tensor(rng, 3, 5, 5);
  Tensor f_j = random_tensor(rng, 3, 5, 5);
  FlowMap flow = random_offgrid_flow(rng, 5, 5);

  Tensor grad_fi, grad_fj;
  FlowMap grad_flow;
  trl_backward(f_i, f_j, flow, cfg, grad_fi, grad_fj, grad_flow);
  auto eval = [&] { return trl_forward(f_i, f_j, flow, cfg); };
  return check_blocks(eval, {{f_i.data, grad_fi.data},
                             {f_j.data, grad_fj.data},
                             {flow.data, grad_flow.data}});
}

double check_aggregate(uint64_t seed) {
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    Rng rng(seed + 0x9e3779b9u * static_cast<uint64_t>(attempt + 1));
    Tensor current = random_tensor(rng, 3, 4, 4);
    std::vector<Tensor> neighbors{random_tensor(rng, 3, 4, 4), random_tensor(rng, 3, 4, 4)};
    const Tensor probe = random_tensor(rng, 3, 4, 4);

    // keep every member vector's norm away from the cosine singularity
    double min_norm = 1e300;
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        for (int m = 0; m < 3; ++m) {
          const Tensor& t = m == 0 ? current : neighbors[m - 1];
          double sq = 0.0;
          for (int c = 0; c < 3; ++c) sq += t.at(c, y, x) * t.at(c, y, x);
          min_norm = std::min(min_norm, std::sqrt(sq));
        }
      }
    }
    if (min_norm < 0.05) continue;

    Tensor grad_current;
    std::vector<Tensor> grad_neighbors;
    aggregate_backward(current, neighbors, probe, grad_current, grad_neighbors);
    auto eval = [&] { return dot_all(aggregate(current, neighbors), probe); };
    return check_blocks(eval, {{current.data, grad_current.data},
                               {neighbors[0].data, grad_neighbors[0].data},
                               {neighbors[1].data, grad_neighbors[1].data}});
  }
  throw std::runtime_error("check_aggregate: no well-separated instance found");
}

struct CaseDef {
  std::string name;
  bool composed;  // composed graphs get the looser tolerance
  std::function<double(uint64_t)> run;
};

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(int seeds, double tol_primitive,
                                               double tol_graph) {
  using V = IffConfig::Variant;
  const std::vector<CaseDef> defs = {
      {"conv2d 3x3 stride1", false, [](uint64_t s) { return check_conv(s, 3, 1); }},
      {"conv2d 1x1 stride1", false, [](uint64_t s) { return check_conv(s, 1, 1); }},
      {"conv2d 3x3 stride2", false, [](uint64_t s) { return check_conv(s, 3, 2); }},
      {"bilinear_warp", false, check_warp},
      {"correlation stride1", false, [](uint64_t s) { return check_correlation(s, 1); }},
      {"correlation stride2", false, [](uint64_t s) { return check_correlation(s, 2); }},
      {"trl", false, check_trl},
      {"aggregate", false, check_aggregate},
      {"eb_block identity-skip", true, [](uint64_t s) { return check_eb_block(s, 4, 4); }},
      {"eb_block projected-skip", true, [](uint64_t s) { return check_eb_block(s, 5, 3); }},
      {"iff basic graph", true, [](uint64_t s) { return check_iff_graph(s, V::basic); }},
      {"iff advanced graph", true, [](uint64_t s) { return check_iff_graph(s, V::advanced); }},
      {"iff basic + trl", true, [](uint64_t s) { return check_iff_trl(s, V::basic); }},
      {"iff advanced + trl", true, [](uint64_t s) { return check_iff_trl(s, V::advanced); }},
  };

  std::vector<GradCheckCase> results;
  for (const CaseDef& def : defs) {
    std::vector<double> errs(seeds, 0.0);
#pragma omp parallel for
    for (int s = 0; s < seeds; ++s) {
      errs[s] = def.run(1000003ull * static_cast<uint64_t>(s + 1));
    }
    GradCheckCase gc;
    gc.name = def.name;
    gc.tolerance = def.composed ? tol_graph : tol_primitive;
    gc.max_rel_err = *std::max_element(errs.begin(), errs.end());
    gc.pass = gc.max_rel_err < gc.tolerance;
    results.push_back(std::move(gc));
  }
  return results;
}

}  // namespace featflow
