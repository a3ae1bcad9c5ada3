#include "dtkd/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>

namespace dtkd::kernels {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Column matrix of one sample: rows = C*kh*kw, cols = out_h*out_w.
void im2col(const double* src, const ConvGeometry& g, double* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* channel = src + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* line = channel + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : line[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dst) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* channel = dst + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* line = channel + static_cast<std::size_t>(iy) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) line[ix] += src[ox];
          }
        }
      }
    }
  }
}
}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map out(c, M, N);
  if (!accumulate) out.setZero();
  if (!trans_a && !trans_b)
    out.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
  else if (trans_a && !trans_b)
    out.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
  else if (!trans_a && trans_b)
    out.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
  else
    out.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::ShapeMismatch, "matmul expects rank-2 tensors");
  require(a.dim(1) == b.dim(0), ErrorKind::ShapeMismatch,
          "matmul inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out(Shape{a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), out.raw(), false);
  return out;
}

ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding) {
  require(input.size() == 4, ErrorKind::ShapeMismatch, "conv2d input must be [N,C,H,W], got " + shape_string(input));
  require(weight.size() == 4, ErrorKind::ShapeMismatch, "conv2d weight must be [O,C,kh,kw]");
  require(stride > 0, ErrorKind::InvalidConfig, "conv2d stride must be positive");
  require(input[1] == weight[1], ErrorKind::ShapeMismatch,
          "conv2d channel mismatch: input has " + std::to_string(input[1]) + ", weight expects " +
              std::to_string(weight[1]));
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride = stride;
  g.padding = padding;
  require(g.height + 2 * padding >= g.kernel_h && g.width + 2 * padding >= g.kernel_w, ErrorKind::ShapeMismatch,
          "conv2d kernel larger than padded input");
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, std::size_t stride,
                      std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), stride, padding);
  if (bias) require(bias->numel() == g.out_channels, ErrorKind::ShapeMismatch, "conv2d bias length mismatch");
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  Tensor out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  std::vector<double> col(patch * plane);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(input.raw() + n * g.in_channels * g.height * g.width, g, col.data());
    double* dst = out.raw() + n * g.out_channels * plane;
    gemm(false, false, g.out_channels, plane, patch, weight.raw(), col.data(), dst, false);
    if (bias)
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        const double b = (*bias)[o];
        for (std::size_t p = 0; p < plane; ++p) dst[o * plane + p] += b;
      }
  }
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weight, const ConvGeometry& g, const Tensor& grad_out,
                     Tensor* grad_input, Tensor* grad_weight, Tensor* grad_bias) {
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  std::vector<double> col(patch * plane);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* go = grad_out.raw() + n * g.out_channels * plane;
    if (grad_weight) {
      im2col(input.raw() + n * g.in_channels * g.height * g.width, g, col.data());
      gemm(false, true, g.out_channels, patch, plane, go, col.data(), grad_weight->raw(), true);
    }
    if (grad_bias)
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += go[o * plane + p];
        (*grad_bias)[o] += s;
      }
    if (grad_input) {
      gemm(true, false, patch, plane, g.out_channels, weight.raw(), go, col.data(), false);
      col2im_add(col.data(), g, grad_input->raw() + n * g.in_channels * g.height * g.width);
    }
  }
}

PoolResult maxpool2d_forward(const Tensor& input, std::size_t window) {
  require(input.rank() == 4, ErrorKind::ShapeMismatch, "maxpool2d input must be [N,C,H,W]");
  require(window > 0, ErrorKind::InvalidConfig, "pool window must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h % window == 0 && w % window == 0, ErrorKind::OddDimension,
          "maxpool2d needs spatial dims divisible by " + std::to_string(window) + ", got " +
              shape_string(input.shape()));
  const std::size_t oh = h / window, ow = w / window;
  PoolResult r{Tensor(Shape{n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++k) {
        std::size_t best = base + oy * window * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = base + (oy * window + dy) * w + ox * window + dx;
            if (input[idx] > input[best]) best = idx;
          }
        r.output[k] = input[best];
        r.argmax[k] = best;
      }
  }
  return r;
}

}  // namespace dtkd::kernels
