#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace featflow {

// Thrown when an operation receives tensors whose shapes violate its
// contract. The message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown on malformed files (FTZ, checkpoints, detection JSON, spec files).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense rank-3 feature volume, 64-bit floats, channel-major (c, y, x):
//   index(c, y, x) = (c * height + y) * width + x
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0);

  int size() const { return channels * height * width; }
  int idx(int c, int y, int x) const { return (c * height + y) * width + x; }
  double& at(int c, int y, int x) { return data[idx(c, y, x)]; }
  double at(int c, int y, int x) const { return data[idx(c, y, x)]; }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  std::string shape_str() const;
};

// A flow map is a plain tensor with exactly 2 channels:
//   channel 0 = dx (positive rightward), channel 1 = dy (positive downward),
// in feature-grid units.
using FlowMap = Tensor;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_flow_for(const FlowMap& flow, const Tensor& feature, const char* op);

bool all_finite(const Tensor& t);

// Learnable parameter: flat value/grad arrays plus a shape. Conv weights use
// shape {out, in, kh, kw}, biases {out}. grad always matches value in size
// and is zero after construction and zero_grad().
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string name_, std::vector<int> shape_);

  int size() const { return static_cast<int>(value.size()); }
  void zero_grad();
};

// value <- value - lr * grad, grads left untouched.
void sgd_step(const std::vector<Param*>& params, double lr);
void zero_grads(const std::vector<Param*>& params);

// ---- elementwise / structural ops ----

// Stacks b's channels after a's. Spatial dims must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Channels [c0, c1) of t. Slicing a concat result at the seam recovers the
// original operands, which is also how concat's backward is expressed.
Tensor slice_channels(const Tensor& t, int c0, int c1);

Tensor add_elementwise(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
// Subgradient at 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

// ---- FTZ v1 tensor file format ----
// ASCII header line "FTZ1 <channels> <height> <width>\n" followed by
// channels*height*width little-endian IEEE-754 doubles in (c, y, x) order.
void write_ftz(std::ostream& os, const Tensor& t);
Tensor read_ftz(std::istream& is);
void write_ftz_file(const std::string& path, const Tensor& t);
Tensor read_ftz_file(const std::string& path);

}  // namespace featflow
