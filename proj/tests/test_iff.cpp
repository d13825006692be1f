#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <cstdio>

#include "featflow/gradcheck.hpp"
#include "featflow/iff.hpp"
#include "featflow/tensor.hpp"
#include "support.hpp"

using namespace featflow;

namespace {

IffConfig toy_config(IffConfig::Variant variant) {
  IffConfig cfg;
  cfg.variant = variant;
  cfg.in_channels = 8;
  cfg.mid_channels = 8;
  cfg.fuse_channels = 4;
  cfg.corr = CorrConfig{2, 1};
  return cfg;
}

long long conv_params(int out, int in, int k) {
  return static_cast<long long>(out) * in * k * k + out;
}

}  // namespace

TEST_CASE("layer counts match the published structure") {
  IffModule basic(toy_config(IffConfig::Variant::basic), 1);
  IffModule advanced(toy_config(IffConfig::Variant::advanced), 1);
  CHECK(basic.report().conv_layers == 3);
  CHECK(advanced.report().conv_layers == 9);
}

TEST_CASE("parameter count equals the closed-form tally") {
  const int in = 8, mid = 8, fuse = 4, corr_ch = 25;

  IffModule basic(toy_config(IffConfig::Variant::basic), 7);
  const long long basic_expect =
      conv_params(mid, in, 1) + conv_params(mid, in, 3) + conv_params(2, 2 * mid, 3);
  CHECK(basic.report().parameter_count == basic_expect);
  CHECK(basic_expect == 946);

  IffModule advanced(toy_config(IffConfig::Variant::advanced), 7);
  const long long advanced_expect =
      conv_params(mid, in, 1) + conv_params(mid, mid, 1) + conv_params(mid, mid, 3)  // EB-1
      + conv_params(fuse, corr_ch, 3)                                                // corr proj
      + conv_params(fuse, mid, 1) + conv_params(fuse, fuse, 1) +
      conv_params(fuse, fuse, 3) + conv_params(fuse, mid, 1)  // EB-2 incl. skip projection
      + conv_params(fuse, fuse, 3) + conv_params(2, fuse, 3);  // head
  CHECK(advanced.report().parameter_count == advanced_expect);
  CHECK(advanced_expect == 2094);
  CHECK(advanced.report().skip_projections == 1);  // in == mid, so only EB-2 projects
}

TEST_CASE("identical seeds give bit-identical parameters and flow") {
  IffModule a(toy_config(IffConfig::Variant::advanced), 42);
  IffModule b(toy_config(IffConfig::Variant::advanced), 42);
  auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value == pb[i]->value);
  }

  Rng rng(43);
  const Tensor f_i = testsupport::random_tensor(rng, 8, 6, 6);
  const Tensor f_j = testsupport::random_tensor(rng, 8, 6, 6);
  CHECK(a.forward(f_i, f_j).data == b.forward(f_i, f_j).data);

  IffModule c(toy_config(IffConfig::Variant::advanced), 43);
  CHECK(c.params()[0]->value != pa[0]->value);
}

TEST_CASE("forward emits a finite 2-channel map of input spatial dims") {
  for (auto variant : {IffConfig::Variant::basic, IffConfig::Variant::advanced}) {
    IffModule module(toy_config(variant), 5);
    Rng rng(44);
    const Tensor f = testsupport::random_tensor(rng, 8, 6, 7);
    const FlowMap flow = module.forward(f, f);
    CHECK(flow.channels == 2);
    CHECK(flow.height == 6);
    CHECK(flow.width == 7);
    CHECK(all_finite(flow));
  }
}

TEST_CASE("correlation stage emits 25 channels at toy dims") {
  IffModule module(toy_config(IffConfig::Variant::advanced), 5);
  Rng rng(45);
  const Tensor f_i = testsupport::random_tensor(rng, 8, 6, 6);
  const Tensor f_j = testsupport::random_tensor(rng, 8, 6, 6);
  IffTrace trace;
  module.forward(f_i, f_j, trace);
  CHECK(trace.corr_out.channels == 25);
  CHECK(module.report().corr_output_channels == 25);
}

TEST_CASE("initial flow magnitude is small") {
  for (auto variant : {IffConfig::Variant::basic, IffConfig::Variant::advanced}) {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
      IffModule module(toy_config(variant), seed);
      Rng rng(46 + seed);
      const Tensor f_i = testsupport::random_tensor(rng, 8, 16, 16);
      const Tensor f_j = testsupport::random_tensor(rng, 8, 16, 16);
      const FlowMap flow = module.forward(f_i, f_j);
      double mean_abs = 0.0;
      for (double v : flow.data) mean_abs += std::fabs(v);
      mean_abs /= flow.size();
      CHECK(mean_abs < 0.5);
    }
  }
}

TEST_CASE("input shape violations are rejected") {
  IffModule module(toy_config(IffConfig::Variant::advanced), 5);
  CHECK_THROWS_AS(module.forward(Tensor(4, 6, 6), Tensor(4, 6, 6)), ShapeError);
  CHECK_THROWS_AS(module.forward(Tensor(8, 6, 6), Tensor(8, 5, 6)), ShapeError);
}

TEST_CASE("zeroing a block's convolutions leaves the skip-path identity") {
  EbBlock eb("eb", 6, 6);
  REQUIRE(!eb.has_proj);
  Rng rng(47);
  std::vector<Param*> ps;
  eb.collect(ps);
  for (Param* p : ps) std::fill(p->value.begin(), p->value.end(), 0.0);
  const Tensor input = testsupport::random_tensor(rng, 6, 5, 5, 0.0, 2.0);  // nonnegative
  const Tensor out = eb.forward(input, nullptr);
  CHECK(out.data == input.data);
}

TEST_CASE("zero flow cotangent produces zero gradients everywhere") {
  IffModule module(toy_config(IffConfig::Variant::advanced), 5);
  Rng rng(48);
  const Tensor f_i = testsupport::random_tensor(rng, 8, 6, 6);
  const Tensor f_j = testsupport::random_tensor(rng, 8, 6, 6);
  IffTrace trace;
  module.forward(f_i, f_j, trace);
  zero_grads(module.params());
  Tensor grad_fi, grad_fj;
  module.backward(trace, FlowMap(2, 6, 6), &grad_fi, &grad_fj);
  for (Param* p : module.params()) {
    for (double g : p->grad) CHECK(g == 0.0);
  }
  for (double g : grad_fi.data) CHECK(g == 0.0);
  for (double g : grad_fj.data) CHECK(g == 0.0);
}

TEST_CASE("gradients accumulate linearly across backward calls") {
  IffModule module(toy_config(IffConfig::Variant::basic), 6);
  Rng rng(49);
  const Tensor f_i = testsupport::random_tensor(rng, 8, 5, 5);
  const Tensor f_j = testsupport::random_tensor(rng, 8, 5, 5);
  IffTrace trace;
  const FlowMap flow = module.forward(f_i, f_j, trace);

  zero_grads(module.params());
  module.backward(trace, flow);
  std::vector<std::vector<double>> single;
  for (Param* p : module.params()) single.push_back(p->grad);

  zero_grads(module.params());
  module.backward(trace, flow);
  module.backward(trace, flow);
  auto ps = module.params();
  for (size_t i = 0; i < ps.size(); ++i) {
    for (size_t k = 0; k < ps[i]->grad.size(); ++k) {
      CHECK(ps[i]->grad[k] == 2.0 * single[i][k]);
    }
  }
}

TEST_CASE("full graph gradient-checks at toy dims") {
  // spot check at the 8/8/4 configuration; the gradcheck suite sweeps more
  // seeds at smaller dims
  for (int attempt = 0; attempt < 16; ++attempt) {
    const uint64_t seed = 50 + attempt;
    IffModule module(toy_config(IffConfig::Variant::advanced), seed);
    Rng rng(seed);
    Tensor f_i = testsupport::random_tensor(rng, 8, 6, 6);
    Tensor f_j = testsupport::random_tensor(rng, 8, 6, 6);
    IffTrace trace;
    const FlowMap flow = module.forward(f_i, f_j, trace);
    if (min_relu_preact(trace, IffConfig::Variant::advanced) < 1e-4) continue;

    zero_grads(module.params());
    Tensor grad_fi, grad_fj;
    module.backward(trace, flow, &grad_fi, &grad_fj);
    auto eval = [&] {
      const FlowMap out = module.forward(f_i, f_j);
      double acc = 0.0;
      for (double v : out.data) acc += 0.5 * v * v;
      return acc;
    };
    double worst = 0.0;
    worst = std::max(worst, grad_check(eval, f_i.data, grad_fi.data));
    worst = std::max(worst, grad_check(eval, f_j.data, grad_fj.data));
    for (Param* p : module.params()) {
      worst = std::max(worst, grad_check(eval, p->value, p->grad));
    }
    CHECK(worst < 1e-4);
    return;
  }
  FAIL("no instance clear of ReLU kinks found");
}

TEST_CASE("checkpoint round-trips bit-exactly into a fresh module") {
  const std::string path = "iff_ckpt_test.bin";
  IffModule a(toy_config(IffConfig::Variant::advanced), 60);
  a.save_checkpoint(path);

  IffModule b(toy_config(IffConfig::Variant::advanced), 61);  // different init
  b.load_checkpoint(path);
  auto pa = a.params(), pb = b.params();
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value == pb[i]->value);
  }

  Rng rng(62);
  const Tensor f_i = testsupport::random_tensor(rng, 8, 6, 6);
  const Tensor f_j = testsupport::random_tensor(rng, 8, 6, 6);
  CHECK(a.forward(f_i, f_j).data == b.forward(f_i, f_j).data);

  // loading into a mismatching architecture fails
  IffModule c(toy_config(IffConfig::Variant::basic), 0);
  CHECK_THROWS_AS(c.load_checkpoint(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("reference configuration wires 512-channel maps into a 121-channel volume") {
  IffConfig cfg;  // defaults are the reference dims
  IffModule module(cfg, 1);
  const IffReport r = module.report();
  CHECK(r.conv_layers == 9);
  CHECK(r.corr_input_channels == 512);
  CHECK(r.corr_output_channels == 121);
  CHECK(r.skip_projections == 2);

  Rng rng(63);
  const Tensor f_i = testsupport::random_tensor(rng, 1024, 6, 6);
  const Tensor f_j = testsupport::random_tensor(rng, 1024, 6, 6);
  IffTrace trace;
  const FlowMap flow = module.forward(f_i, f_j, trace);
  CHECK(trace.eb1_i.out.channels == 512);
  CHECK(trace.corr_out.channels == 121);
  CHECK(flow.channels == 2);
  CHECK(flow.height == 6);
}

TEST_CASE("flow is identical across thread counts") {
  IffModule module(toy_config(IffConfig::Variant::advanced), 64);
  Rng rng(65);
  const Tensor f_i = testsupport::random_tensor(rng, 8, 8, 8);
  const Tensor f_j = testsupport::random_tensor(rng, 8, 8, 8);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const FlowMap one = module.forward(f_i, f_j);
  omp_set_num_threads(4);
  const FlowMap four = module.forward(f_i, f_j);
  omp_set_num_threads(saved);
  CHECK(one.data == four.data);
}
