#include "featflow/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace featflow {

Tensor::Tensor(int c, int h, int w, double fill) : channels(c), height(h), width(w) {
  if (c <= 0 || h <= 0 || w <= 0) {
    throw ShapeError("tensor dims must be positive, got " + std::to_string(c) + "x" +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  data.assign(static_cast<size_t>(c) * h * w, fill);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << channels << "x" << height << "x" << width;
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

void require_flow_for(const FlowMap& flow, const Tensor& feature, const char* op) {
  if (flow.channels != 2) {
    throw ShapeError(std::string(op) + ": flow must have 2 channels, got " + flow.shape_str());
  }
  if (flow.height != feature.height || flow.width != feature.width) {
    throw ShapeError(std::string(op) + ": flow spatial dims " + flow.shape_str() +
                     " do not match feature " + feature.shape_str());
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Param::Param(std::string name_, std::vector<int> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("param " + name + ": non-positive dim");
    n *= static_cast<size_t>(d);
  }
  value.assign(n, 0.0);
  grad.assign(n, 0.0);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void sgd_step(const std::vector<Param*>& params, double lr) {
  for (Param* p : params) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      p->value[i] -= lr * p->grad[i];
    }
  }
}

void zero_grads(const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("concat_channels: spatial mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
  Tensor out(a.channels + b.channels, a.height, a.width);
  const size_t plane = static_cast<size_t>(a.height) * a.width;
  std::memcpy(out.data.data(), a.data.data(), a.data.size() * sizeof(double));
  std::memcpy(out.data.data() + a.channels * plane, b.data.data(),
              b.data.size() * sizeof(double));
  return out;
}

Tensor slice_channels(const Tensor& t, int c0, int c1) {
  if (c0 < 0 || c1 > t.channels || c0 >= c1) {
    throw ShapeError("slice_channels: range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") invalid for " + t.shape_str());
  }
  Tensor out(c1 - c0, t.height, t.width);
  const size_t plane = static_cast<size_t>(t.height) * t.width;
  std::memcpy(out.data.data(), t.data.data() + c0 * plane, out.data.size() * sizeof(double));
  return out;
}

Tensor add_elementwise(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_elementwise");
  Tensor out(a.channels, a.height, a.width);
  const int n = out.size();
#pragma omp parallel for
  for (int i = 0; i < n; ++i) {
    out.data[i] = a.data[i] + b.data[i];
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.channels, a.height, a.width);
  const int n = out.size();
#pragma omp parallel for
  for (int i = 0; i < n; ++i) {
    out.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
  }
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor out(input.channels, input.height, input.width);
  const int n = out.size();
#pragma omp parallel for
  for (int i = 0; i < n; ++i) {
    out.data[i] = input.data[i] > 0.0 ? grad_out.data[i] : 0.0;
  }
  return out;
}

namespace {

void put_le64(std::ostream& os, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

double get_le64(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  if (!is) throw ParseError("FTZ: truncated payload");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_ftz(std::ostream& os, const Tensor& t) {
  os << "FTZ1 " << t.channels << ' ' << t.height << ' ' << t.width << '\n';
  for (double v : t.data) put_le64(os, v);
}

Tensor read_ftz(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw ParseError("FTZ: missing header");
  std::istringstream hs(header);
  std::string magic;
  int c = 0, h = 0, w = 0;
  if (!(hs >> magic >> c >> h >> w) || magic != "FTZ1") {
    throw ParseError("FTZ: bad header '" + header + "'");
  }
  if (c <= 0 || h <= 0 || w <= 0) throw ParseError("FTZ: non-positive dims in header");
  Tensor t(c, h, w);
  for (double& v : t.data) v = get_le64(is);
  return t;
}

void write_ftz_file(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open for writing: " + path);
  write_ftz(os, t);
  if (!os) throw ParseError("write failed: " + path);
}

Tensor read_ftz_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open: " + path);
  return read_ftz(is);
}

}  // namespace featflow
