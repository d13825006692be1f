#include "featflow/iff.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "featflow/conv.hpp"
#include "featflow/rng.hpp"

namespace featflow {

void IffConfig::validate() const {
  if (in_channels < 1 || mid_channels < 1 || fuse_channels < 1) {
    throw ShapeError("iff config: channel counts must be >= 1");
  }
  corr.validate();
}

IffConfig::Variant parse_variant(std::string_view s) {
  if (s == "basic") return IffConfig::Variant::basic;
  if (s == "advanced") return IffConfig::Variant::advanced;
  throw ParseError("unknown iff variant '" + std::string(s) + "'");
}

namespace {

// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)); biases stay zero.
void init_conv(Param& w, Rng& rng, double scale = 1.0) {
  const int out_c = w.shape[0], in_c = w.shape[1], kh = w.shape[2], kw = w.shape[3];
  const double fan_in = static_cast<double>(in_c) * kh * kw;
  const double fan_out = static_cast<double>(out_c) * kh * kw;
  const double a = std::sqrt(6.0 / (fan_in + fan_out)) * scale;
  for (double& v : w.value) v = rng.uniform(-a, a);
}

Param make_weight(const std::string& name, int out_c, int in_c, int kh, int kw) {
  return Param(name, {out_c, in_c, kh, kw});
}

Param make_bias(const std::string& name, int out_c) { return Param(name + ".bias", {out_c}); }

int pad_for(int k) { return (k - 1) / 2; }  // "same" padding for odd kernels, stride 1

Tensor conv_same(const Tensor& x, const Param& w, const Param& b) {
  return conv2d_forward(x, w, b, pad_for(w.shape[2]), 1);
}

double min_abs(const Tensor& t) {
  double best = std::numeric_limits<double>::infinity();
  for (double v : t.data) best = std::min(best, std::fabs(v));
  return best;
}

double min_preact(const EbBlock::Trace& t) {
  return std::min({min_abs(t.pre1), min_abs(t.pre2), min_abs(t.sum)});
}

}  // namespace

EbBlock::EbBlock(const std::string& name, int in_c, int out_c)
    : conv1_w(make_weight(name + ".conv1", out_c, in_c, 1, 1)),
      conv1_b(make_bias(name + ".conv1", out_c)),
      conv2_w(make_weight(name + ".conv2", out_c, out_c, 1, 1)),
      conv2_b(make_bias(name + ".conv2", out_c)),
      conv3_w(make_weight(name + ".conv3", out_c, out_c, 3, 3)),
      conv3_b(make_bias(name + ".conv3", out_c)),
      has_proj(in_c != out_c) {
  if (has_proj) {
    proj_w = make_weight(name + ".proj", out_c, in_c, 1, 1);
    proj_b = make_bias(name + ".proj", out_c);
  }
}

Tensor EbBlock::forward(const Tensor& x, Trace* trace) const {
  Tensor pre1 = conv_same(x, conv1_w, conv1_b);
  Tensor act1 = relu(pre1);
  Tensor pre2 = conv_same(act1, conv2_w, conv2_b);
  Tensor act2 = relu(pre2);
  Tensor pre3 = conv_same(act2, conv3_w, conv3_b);
  Tensor skip = has_proj ? conv_same(x, proj_w, proj_b) : x;
  Tensor sum = add_elementwise(pre3, skip);
  Tensor out = relu(sum);
  if (trace) {
    trace->input = x;
    trace->pre1 = std::move(pre1);
    trace->act1 = std::move(act1);
    trace->pre2 = std::move(pre2);
    trace->act2 = std::move(act2);
    trace->pre3 = std::move(pre3);
    trace->skip = std::move(skip);
    trace->sum = std::move(sum);
    trace->out = out;
  }
  return out;
}

Tensor EbBlock::backward(const Trace& t, const Tensor& grad_out) {
  const Tensor grad_sum = relu_backward(t.sum, grad_out);
  // residual path
  Tensor grad_act2;
  conv2d_backward(t.act2, conv3_w, conv3_b, grad_sum, pad_for(conv3_w.shape[2]), 1, &grad_act2);
  const Tensor grad_pre2 = relu_backward(t.pre2, grad_act2);
  Tensor grad_act1;
  conv2d_backward(t.act1, conv2_w, conv2_b, grad_pre2, 0, 1, &grad_act1);
  const Tensor grad_pre1 = relu_backward(t.pre1, grad_act1);
  Tensor grad_in;
  conv2d_backward(t.input, conv1_w, conv1_b, grad_pre1, 0, 1, &grad_in);
  // skip path
  if (has_proj) {
    Tensor grad_skip_in;
    conv2d_backward(t.input, proj_w, proj_b, grad_sum, 0, 1, &grad_skip_in);
    return add_elementwise(grad_in, grad_skip_in);
  }
  return add_elementwise(grad_in, grad_sum);
}

void EbBlock::collect(std::vector<Param*>& out) {
  out.push_back(&conv1_w);
  out.push_back(&conv1_b);
  out.push_back(&conv2_w);
  out.push_back(&conv2_b);
  out.push_back(&conv3_w);
  out.push_back(&conv3_b);
  if (has_proj) {
    out.push_back(&proj_w);
    out.push_back(&proj_b);
  }
}

IffModule::IffModule(IffConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int in = cfg_.in_channels, mid = cfg_.mid_channels, fuse = cfg_.fuse_channels;
  if (cfg_.variant == IffConfig::Variant::basic) {
    bi_w_ = make_weight("branch_i.conv", mid, in, 1, 1);
    bi_b_ = make_bias("branch_i.conv", mid);
    bj_w_ = make_weight("branch_j.conv", mid, in, 3, 3);
    bj_b_ = make_bias("branch_j.conv", mid);
    bhead_w_ = make_weight("head.conv", 2, 2 * mid, 3, 3);
    bhead_b_ = make_bias("head.conv", 2);
    init_conv(bi_w_, rng);
    init_conv(bj_w_, rng);
    init_conv(bhead_w_, rng, 0.1);  // near-zero initial flow
  } else {
    eb1_ = EbBlock("eb1", in, mid);
    eb2_ = EbBlock("eb2", mid, fuse);
    corr_proj_w_ = make_weight("corr_proj", fuse, cfg_.corr.out_channels(), 3, 3);
    corr_proj_b_ = make_bias("corr_proj", fuse);
    head1_w_ = make_weight("head.conv1", fuse, fuse, 3, 3);
    head1_b_ = make_bias("head.conv1", fuse);
    head2_w_ = make_weight("head.conv2", 2, fuse, 3, 3);
    head2_b_ = make_bias("head.conv2", 2);
    init_conv(eb1_.conv1_w, rng);
    init_conv(eb1_.conv2_w, rng);
    init_conv(eb1_.conv3_w, rng);
    if (eb1_.has_proj) init_conv(eb1_.proj_w, rng);
    init_conv(corr_proj_w_, rng);
    init_conv(eb2_.conv1_w, rng);
    init_conv(eb2_.conv2_w, rng);
    init_conv(eb2_.conv3_w, rng);
    if (eb2_.has_proj) init_conv(eb2_.proj_w, rng);
    init_conv(head1_w_, rng);
    init_conv(head2_w_, rng, 0.1);
  }
}

FlowMap IffModule::forward(const Tensor& f_i, const Tensor& f_j) const {
  IffTrace trace;
  return forward(f_i, f_j, trace);
}

FlowMap IffModule::forward(const Tensor& f_i, const Tensor& f_j, IffTrace& trace) const {
  require_same_shape(f_i, f_j, "iff forward");
  if (f_i.channels != cfg_.in_channels) {
    throw ShapeError("iff forward: input " + f_i.shape_str() + " does not have the configured " +
                     std::to_string(cfg_.in_channels) + " channels");
  }
  trace.f_i = f_i;
  trace.f_j = f_j;
  if (cfg_.variant == IffConfig::Variant::basic) {
    trace.pre_i = conv_same(f_i, bi_w_, bi_b_);
    trace.act_i = relu(trace.pre_i);
    trace.pre_j = conv_same(f_j, bj_w_, bj_b_);
    trace.act_j = relu(trace.pre_j);
    trace.cat = concat_channels(trace.act_i, trace.act_j);
    trace.flow = conv_same(trace.cat, bhead_w_, bhead_b_);
  } else {
    const Tensor e_i = eb1_.forward(f_i, &trace.eb1_i);
    const Tensor e_j = eb1_.forward(f_j, &trace.eb1_j);
    trace.corr_out = correlation(e_i, e_j, cfg_.corr);
    trace.corr_pre = conv_same(trace.corr_out, corr_proj_w_, corr_proj_b_);
    trace.corr_act = relu(trace.corr_pre);
    const Tensor e2 = eb2_.forward(e_i, &trace.eb2);
    trace.merged = add_elementwise(trace.corr_act, e2);
    trace.head1_pre = conv_same(trace.merged, head1_w_, head1_b_);
    trace.head1_act = relu(trace.head1_pre);
    trace.flow = conv_same(trace.head1_act, head2_w_, head2_b_);
  }
  return trace.flow;
}

void IffModule::backward(const IffTrace& trace, const FlowMap& grad_flow, Tensor* grad_fi,
                         Tensor* grad_fj) {
  require_same_shape(grad_flow, trace.flow, "iff backward");
  if (cfg_.variant == IffConfig::Variant::basic) {
    Tensor grad_cat;
    conv2d_backward(trace.cat, bhead_w_, bhead_b_, grad_flow, 1, 1, &grad_cat);
    const int mid = cfg_.mid_channels;
    const Tensor grad_act_i = slice_channels(grad_cat, 0, mid);
    const Tensor grad_act_j = slice_channels(grad_cat, mid, 2 * mid);
    const Tensor grad_pre_i = relu_backward(trace.pre_i, grad_act_i);
    const Tensor grad_pre_j = relu_backward(trace.pre_j, grad_act_j);
    Tensor gi, gj;
    conv2d_backward(trace.f_i, bi_w_, bi_b_, grad_pre_i, 0, 1, &gi);
    conv2d_backward(trace.f_j, bj_w_, bj_b_, grad_pre_j, 1, 1, &gj);
    if (grad_fi) *grad_fi = std::move(gi);
    if (grad_fj) *grad_fj = std::move(gj);
  } else {
    Tensor grad_head1_act;
    conv2d_backward(trace.head1_act, head2_w_, head2_b_, grad_flow, 1, 1, &grad_head1_act);
    const Tensor grad_head1_pre = relu_backward(trace.head1_pre, grad_head1_act);
    Tensor grad_merged;
    conv2d_backward(trace.merged, head1_w_, head1_b_, grad_head1_pre, 1, 1, &grad_merged);
    // merge add fans grad out to both the correlation branch and EB-2
    const Tensor grad_corr_pre = relu_backward(trace.corr_pre, grad_merged);
    Tensor grad_corr_out;
    conv2d_backward(trace.corr_out, corr_proj_w_, corr_proj_b_, grad_corr_pre, 1, 1,
                    &grad_corr_out);
    Tensor grad_ei_corr, grad_ej;
    correlation_backward(trace.eb1_i.out, trace.eb1_j.out, cfg_.corr, grad_corr_out,
                         grad_ei_corr, grad_ej);
    const Tensor grad_ei_eb2 = eb2_.backward(trace.eb2, grad_merged);
    const Tensor grad_ei = add_elementwise(grad_ei_corr, grad_ei_eb2);
    Tensor gi = eb1_.backward(trace.eb1_i, grad_ei);
    Tensor gj = eb1_.backward(trace.eb1_j, grad_ej);
    if (grad_fi) *grad_fi = std::move(gi);
    if (grad_fj) *grad_fj = std::move(gj);
  }
}

std::vector<Param*> IffModule::params() {
  std::vector<Param*> out;
  if (cfg_.variant == IffConfig::Variant::basic) {
    out = {&bi_w_, &bi_b_, &bj_w_, &bj_b_, &bhead_w_, &bhead_b_};
  } else {
    eb1_.collect(out);
    out.push_back(&corr_proj_w_);
    out.push_back(&corr_proj_b_);
    eb2_.collect(out);
    out.push_back(&head1_w_);
    out.push_back(&head1_b_);
    out.push_back(&head2_w_);
    out.push_back(&head2_b_);
  }
  return out;
}

const Param* IffModule::find_param(std::string_view name) {
  for (Param* p : params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

IffReport IffModule::report() {
  IffReport r;
  auto ps = params();
  for (const Param* p : ps) r.parameter_count += p->size();
  if (cfg_.variant == IffConfig::Variant::basic) {
    r.conv_layers = 3;
  } else {
    r.conv_layers = 9;
    r.skip_projections = (eb1_.has_proj ? 1 : 0) + (eb2_.has_proj ? 1 : 0);
    r.corr_input_channels = cfg_.mid_channels;
    r.corr_output_channels = cfg_.corr.out_channels();
  }
  return r;
}

void IffModule::save_checkpoint(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open for writing: " + path);
  for (Param* p : params()) {
    int d[4] = {1, 1, 1, 1};
    for (size_t i = 0; i < p->shape.size() && i < 4; ++i) d[i] = p->shape[i];
    os << p->name << ' ' << d[0] << ' ' << d[1] << ' ' << d[2] << ' ' << d[3] << '\n';
    Tensor block(d[0], d[1], d[2] * d[3]);
    block.data = p->value;
    write_ftz(os, block);
  }
  if (!os) throw ParseError("write failed: " + path);
}

void IffModule::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open: " + path);
  auto ps = params();
  std::vector<bool> seen(ps.size(), false);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    int d[4];
    if (!(ls >> name >> d[0] >> d[1] >> d[2] >> d[3])) {
      throw ParseError("checkpoint: bad manifest line '" + line + "'");
    }
    Tensor block = read_ftz(is);
    size_t idx = ps.size();
    for (size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->name == name) {
        idx = i;
        break;
      }
    }
    if (idx == ps.size()) throw ParseError("checkpoint: unknown parameter '" + name + "'");
    if (seen[idx]) throw ParseError("checkpoint: duplicate parameter '" + name + "'");
    Param* p = ps[idx];
    int d_expect[4] = {1, 1, 1, 1};
    for (size_t i = 0; i < p->shape.size() && i < 4; ++i) d_expect[i] = p->shape[i];
    for (int i = 0; i < 4; ++i) {
      if (d[i] != d_expect[i]) {
        throw ParseError("checkpoint: shape mismatch for '" + name + "'");
      }
    }
    if (static_cast<int>(block.data.size()) != p->size()) {
      throw ParseError("checkpoint: payload size mismatch for '" + name + "'");
    }
    p->value = std::move(block.data);
    seen[idx] = true;
  }
  for (size_t i = 0; i < ps.size(); ++i) {
    if (!seen[i]) throw ParseError("checkpoint: missing parameter '" + ps[i]->name + "'");
  }
}

double min_relu_preact(const IffTrace& trace, IffConfig::Variant variant) {
  if (variant == IffConfig::Variant::basic) {
    return std::min(min_abs(trace.pre_i), min_abs(trace.pre_j));
  }
  return std::min({min_preact(trace.eb1_i), min_preact(trace.eb1_j), min_preact(trace.eb2),
                   min_abs(trace.corr_pre), min_abs(trace.head1_pre)});
}

}  // namespace featflow
