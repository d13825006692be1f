#include "featflow/conv.hpp"

#include <string>

namespace featflow {

namespace {

void check_conv_args(const Tensor& input, const Param& weights, const Param& bias, int pad,
                     int stride) {
  if (weights.shape.size() != 4) {
    throw ShapeError("conv2d: weights must be {out,in,kh,kw}, got rank " +
                     std::to_string(weights.shape.size()));
  }
  if (bias.shape.size() != 1 || bias.shape[0] != weights.shape[0]) {
    throw ShapeError("conv2d: bias shape does not match weight out-channels");
  }
  if (input.channels != weights.shape[1]) {
    throw ShapeError("conv2d: input " + input.shape_str() + " has " +
                     std::to_string(input.channels) + " channels, weights expect " +
                     std::to_string(weights.shape[1]));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >=1 and pad >=0");
  const int kh = weights.shape[2], kw = weights.shape[3];
  if (input.height + 2 * pad < kh || input.width + 2 * pad < kw) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than padded input " + input.shape_str());
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Param& weights, const Param& bias, int pad,
                      int stride) {
  check_conv_args(input, weights, bias, pad, stride);
  const int out_c = weights.shape[0], in_c = weights.shape[1];
  const int kh = weights.shape[2], kw = weights.shape[3];
  const int out_h = (input.height + 2 * pad - kh) / stride + 1;
  const int out_w = (input.width + 2 * pad - kw) / stride + 1;
  Tensor out(out_c, out_h, out_w);

#pragma omp parallel for collapse(2)
  for (int o = 0; o < out_c; ++o) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = bias.value[o];
        for (int i = 0; i < in_c; ++i) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= input.height) continue;
            const double* in_row = &input.data[(static_cast<size_t>(i) * input.height + iy) *
                                               input.width];
            const double* w_row =
                &weights.value[((static_cast<size_t>(o) * in_c + i) * kh + ky) * kw];
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= input.width) continue;
              acc += in_row[ix] * w_row[kx];
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor& input, Param& weights, Param& bias, const Tensor& grad_out,
                     int pad, int stride, Tensor* grad_input) {
  check_conv_args(input, weights, bias, pad, stride);
  const int out_c = weights.shape[0], in_c = weights.shape[1];
  const int kh = weights.shape[2], kw = weights.shape[3];
  const int out_h = (input.height + 2 * pad - kh) / stride + 1;
  const int out_w = (input.width + 2 * pad - kw) / stride + 1;
  if (grad_out.channels != out_c || grad_out.height != out_h || grad_out.width != out_w) {
    throw ShapeError("conv2d_backward: grad_out " + grad_out.shape_str() + " expected " +
                     Tensor(out_c, out_h, out_w).shape_str());
  }

  // Weight and bias gradients: each thread owns one output channel's slice.
#pragma omp parallel for
  for (int o = 0; o < out_c; ++o) {
    double bacc = 0.0;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        bacc += grad_out.at(o, oy, ox);
      }
    }
    bias.grad[o] += bacc;
    for (int i = 0; i < in_c; ++i) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= input.height) continue;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= input.width) continue;
              acc += grad_out.at(o, oy, ox) * input.at(i, iy, ix);
            }
          }
          weights.grad[weight_idx(weights, o, i, ky, kx)] += acc;
        }
      }
    }
  }

  if (grad_input == nullptr) return;

  // Input gradient as a gather over the output positions each input cell
  // feeds, so no two threads write the same element.
  Tensor gin(input.channels, input.height, input.width);
#pragma omp parallel for collapse(2)
  for (int i = 0; i < in_c; ++i) {
    for (int iy = 0; iy < input.height; ++iy) {
      for (int ix = 0; ix < input.width; ++ix) {
        double acc = 0.0;
        for (int o = 0; o < out_c; ++o) {
          for (int ky = 0; ky < kh; ++ky) {
            const int oy_num = iy + pad - ky;
            if (oy_num < 0 || oy_num % stride != 0) continue;
            const int oy = oy_num / stride;
            if (oy >= out_h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ox_num = ix + pad - kx;
              if (ox_num < 0 || ox_num % stride != 0) continue;
              const int ox = ox_num / stride;
              if (ox >= out_w) continue;
              acc += grad_out.at(o, oy, ox) * weights.value[weight_idx(weights, o, i, ky, kx)];
            }
          }
        }
        gin.at(i, iy, ix) = acc;
      }
    }
  }
  *grad_input = std::move(gin);
}

}  // namespace featflow
