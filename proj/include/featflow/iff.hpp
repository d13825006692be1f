#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "featflow/correlation.hpp"
#include "featflow/tensor.hpp"

namespace featflow {

// Configuration of a feature-flow estimation module. The reference
// configuration is in=1024, mid=512, fuse=128, corr {10, 2}; every count is
// adjustable so small instances stay cheap enough for exhaustive
// finite-difference checks.
struct IffConfig {
  enum class Variant { basic, advanced };

  Variant variant = Variant::advanced;
  int in_channels = 1024;
  int mid_channels = 512;
  int fuse_channels = 128;
  CorrConfig corr{10, 2};

  void validate() const;
};

IffConfig::Variant parse_variant(std::string_view s);

// Residual block: 1x1, 1x1, 3x3 convolutions with ReLU between them, an
// identity skip from block input to block output added after the last
// convolution, and ReLU after the addition. When input and output channel
// counts differ the skip is a learned 1x1 projection.
struct EbBlock {
  Param conv1_w, conv1_b;
  Param conv2_w, conv2_b;
  Param conv3_w, conv3_b;
  Param proj_w, proj_b;
  bool has_proj = false;

  struct Trace {
    Tensor input, pre1, act1, pre2, act2, pre3, skip, sum, out;
  };

  EbBlock() = default;
  EbBlock(const std::string& name, int in_c, int out_c);

  Tensor forward(const Tensor& x, Trace* trace) const;
  // Accumulates into the block's param grads and returns grad w.r.t. input.
  Tensor backward(const Trace& trace, const Tensor& grad_out);
  void collect(std::vector<Param*>& out);
};

// Saved intermediates of one forward pass, consumed by backward.
struct IffTrace {
  Tensor f_i, f_j;
  // basic variant
  Tensor pre_i, act_i, pre_j, act_j, cat;
  // advanced variant
  EbBlock::Trace eb1_i, eb1_j, eb2;
  Tensor corr_out, corr_pre, corr_act, merged, head1_pre, head1_act;
  FlowMap flow;
};

struct IffReport {
  int conv_layers = 0;        // layers in the published tally
  int skip_projections = 0;   // learned 1x1 skips, counted separately
  long long parameter_count = 0;
  int corr_input_channels = 0;
  int corr_output_channels = 0;
};

// Feature-flow estimation module. Maps two equally-shaped feature maps to a
// 2-channel flow map.
//
// basic:    conv1x1(f_i) and conv3x3(f_j) -> concat -> conv3x3 -> flow
// advanced: shared EB-1 on both frames; correlation of the two embeddings
//           -> conv3x3; EB-2 on the current-frame embedding; element-wise
//           add; conv3x3 -> conv3x3 -> flow
//
// Every convolution is followed by ReLU except the final flow-emitting one.
class IffModule {
 public:
  IffModule(IffConfig cfg, uint64_t seed);

  const IffConfig& config() const { return cfg_; }

  FlowMap forward(const Tensor& f_i, const Tensor& f_j) const;
  FlowMap forward(const Tensor& f_i, const Tensor& f_j, IffTrace& trace) const;

  // Accumulates parameter gradients; optionally returns input gradients.
  void backward(const IffTrace& trace, const FlowMap& grad_flow, Tensor* grad_fi = nullptr,
                Tensor* grad_fj = nullptr);

  std::vector<Param*> params();
  const Param* find_param(std::string_view name);

  IffReport report();

  // Checkpoint: per parameter, a manifest line "<name> <d0> <d1> <d2> <d3>"
  // followed by an FTZ block holding the values. Round-trips bit-exactly.
  void save_checkpoint(const std::string& path);
  void load_checkpoint(const std::string& path);

 private:
  IffConfig cfg_;

  // basic
  Param bi_w_, bi_b_, bj_w_, bj_b_, bhead_w_, bhead_b_;
  // advanced
  EbBlock eb1_, eb2_;
  Param corr_proj_w_, corr_proj_b_;
  Param head1_w_, head1_b_, head2_w_, head2_b_;
};

// Minimum |pre-activation| over every ReLU input recorded in the trace.
// Finite-difference checks reject instances where this is within the step
// size of the ReLU kink.
double min_relu_preact(const IffTrace& trace, IffConfig::Variant variant);

}  // namespace featflow
