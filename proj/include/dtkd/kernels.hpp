#pragma once

#include <cstddef>
#include <vector>

#include "dtkd/tensor.hpp"

// Raw numeric kernels shared by the taped (training) and untaped (inference)
// paths. Backward kernels accumulate into their output buffers.
namespace dtkd::kernels {

/// C = op(A)·op(B) (+ C when accumulate). Row-major, op = transpose when flagged.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

Tensor matmul(const Tensor& a, const Tensor& b);

struct ConvGeometry {
  std::size_t batch = 0, in_channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;
  std::size_t out_h = 0, out_w = 0;
};

/// Validates input [N,C,H,W] against weight [O,C,kh,kw] and derives
/// H' = floor((H + 2P - kh) / S) + 1 (same for W').
ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding);

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, std::size_t stride,
                      std::size_t padding);

/// Any of the grad pointers may be null when that gradient is not needed.
void conv2d_backward(const Tensor& input, const Tensor& weight, const ConvGeometry& g, const Tensor& grad_out,
                     Tensor* grad_input, Tensor* grad_weight, Tensor* grad_bias);

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Non-overlapping max pooling; ties resolve to the first element in row-major order.
PoolResult maxpool2d_forward(const Tensor& input, std::size_t window);

}  // namespace dtkd::kernels
