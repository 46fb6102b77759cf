#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "stcl/error.hpp"
#include "stcl/feature_map.hpp"

namespace stcl {

/// Weights and bias of one convolution layer.
///
/// For conv2d the weight layout is (kh, kw, in_channels, out_channels).
/// For deconv2d it is (kh, kw, out_channels, in_channels): the layout of
/// the strided convolution that deconv2d is the adjoint of. An empty bias
/// means the layer has no bias term.
struct ConvKernel {
  int kh = 3;
  int kw = 3;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  ConvKernel() = default;
  ConvKernel(int kh_, int kw_, int in, int out, int stride_, bool with_bias = true)
      : kh(kh_), kw(kw_), in_channels(in), out_channels(out), stride(stride_) {
    validate();
    weights.assign(weight_count(), 0.0);
    if (with_bias) bias.assign(static_cast<std::size_t>(out), 0.0);
  }

  std::size_t weight_count() const { return static_cast<std::size_t>(kh) * kw * in_channels * out_channels; }
  bool has_bias() const { return !bias.empty(); }

  void validate() const {
    if (kh <= 0 || kw <= 0 || kh % 2 == 0 || kw % 2 == 0)
      throw ConfigError("kernel size must be odd and positive, got " + std::to_string(kh) + "x" + std::to_string(kw));
    if (in_channels <= 0 || out_channels <= 0) throw ConfigError("kernel channel counts must be positive");
    if (stride != 1 && stride != 2) throw ConfigError("stride must be 1 or 2, got " + std::to_string(stride));
    if (!weights.empty() && weights.size() != weight_count())
      throw ConfigError("kernel weight count " + std::to_string(weights.size()) + " != " +
                        std::to_string(weight_count()));
    if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels))
      throw ConfigError("kernel bias length does not match out_channels");
  }

  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

/// Parameter gradients of one layer plus the gradient w.r.t. its input.
struct ConvGrad {
  FeatureMap input;
  std::vector<double> weights;
  std::vector<double> bias;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

/// "Same" padding geometry of a strided convolution from an in_rows x
/// in_cols map; the output is ceil(in / stride) and any odd padding total
/// puts the extra row/column at the bottom/right.
struct ConvGeometry {
  int in_rows, in_cols, out_rows, out_cols;
  int kh, kw, stride, pad_top, pad_left;

  static ConvGeometry make(int in_rows, int in_cols, int kh, int kw, int stride) {
    ConvGeometry g{};
    g.in_rows = in_rows;
    g.in_cols = in_cols;
    g.kh = kh;
    g.kw = kw;
    g.stride = stride;
    g.out_rows = (in_rows + stride - 1) / stride;
    g.out_cols = (in_cols + stride - 1) / stride;
    g.pad_top = std::max((g.out_rows - 1) * stride + kh - in_rows, 0) / 2;
    g.pad_left = std::max((g.out_cols - 1) * stride + kw - in_cols, 0) / 2;
    return g;
  }
  int patch_len(int channels) const { return kh * kw * channels; }
  int out_pixels() const { return out_rows * out_cols; }
};

/// Patch matrix: one row per output pixel, one column per (a, b, channel).
inline RowMatrix im2col(const FeatureMap& x, const ConvGeometry& g) {
  const int ch = x.channels();
  RowMatrix cols = RowMatrix::Zero(g.out_pixels(), g.patch_len(ch));
  for (int i = 0; i < g.out_rows; ++i) {
    for (int j = 0; j < g.out_cols; ++j) {
      double* row = cols.data() + static_cast<std::size_t>(i * g.out_cols + j) * g.patch_len(ch);
      for (int a = 0; a < g.kh; ++a) {
        const int r = i * g.stride + a - g.pad_top;
        if (r < 0 || r >= g.in_rows) continue;
        for (int b = 0; b < g.kw; ++b) {
          const int c = j * g.stride + b - g.pad_left;
          if (c < 0 || c >= g.in_cols) continue;
          const double* src = x.data() + (static_cast<std::size_t>(r) * g.in_cols + c) * ch;
          std::copy(src, src + ch, row + (a * g.kw + b) * ch);
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatter-adds patch rows back onto an in_rows x
/// in_cols map. Accumulation order is fixed (row-major over patches).
inline FeatureMap col2im(const RowMatrix& cols, const ConvGeometry& g, int channels) {
  FeatureMap x(g.in_rows, g.in_cols, channels);
  for (int i = 0; i < g.out_rows; ++i) {
    for (int j = 0; j < g.out_cols; ++j) {
      const double* row = cols.data() + static_cast<std::size_t>(i * g.out_cols + j) * g.patch_len(channels);
      for (int a = 0; a < g.kh; ++a) {
        const int r = i * g.stride + a - g.pad_top;
        if (r < 0 || r >= g.in_rows) continue;
        for (int b = 0; b < g.kw; ++b) {
          const int c = j * g.stride + b - g.pad_left;
          if (c < 0 || c >= g.in_cols) continue;
          double* dst = x.data() + (static_cast<std::size_t>(r) * g.in_cols + c) * channels;
          const double* src = row + (a * g.kw + b) * channels;
          for (int k = 0; k < channels; ++k) dst[k] += src[k];
        }
      }
    }
  }
  return x;
}

inline void add_bias(FeatureMap& y, const std::vector<double>& bias) {
  if (bias.empty()) return;
  const int ch = y.channels();
  const std::size_t pixels = static_cast<std::size_t>(y.rows()) * y.cols();
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < ch; ++c) y[p * ch + c] += bias[c];
}

inline std::vector<double> channel_sums(const FeatureMap& g) {
  std::vector<double> s(static_cast<std::size_t>(g.channels()), 0.0);
  const std::size_t pixels = static_cast<std::size_t>(g.rows()) * g.cols();
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < g.channels(); ++c) s[c] += g[p * g.channels() + c];
  return s;
}

inline void check_kernel(const ConvKernel& k) {
  k.validate();
  if (k.weights.size() != k.weight_count()) throw ConfigError("kernel weights not allocated");
}

}  // namespace detail

/// Output spatial size of conv2d along one axis.
inline int conv_output_size(int in, int stride) { return (in + stride - 1) / stride; }

/// 2D convolution (cross-correlation) with "same" zero padding.
inline FeatureMap conv2d(const FeatureMap& input, const ConvKernel& k) {
  detail::check_kernel(k);
  if (input.channels() != k.in_channels)
    throw ConfigError("conv2d: input has " + std::to_string(input.channels()) + " channels, kernel expects " +
                      std::to_string(k.in_channels));
  const auto g = detail::ConvGeometry::make(input.rows(), input.cols(), k.kh, k.kw, k.stride);
  const detail::RowMatrix cols = detail::im2col(input, g);
  FeatureMap out(g.out_rows, g.out_cols, k.out_channels);
  detail::RowMap y(out.data(), g.out_pixels(), k.out_channels);
  detail::ConstRowMap w(k.weights.data(), g.patch_len(k.in_channels), k.out_channels);
  y.noalias() = cols * w;
  detail::add_bias(out, k.bias);
  return out;
}

inline ConvGrad conv2d_backward(const FeatureMap& input, const ConvKernel& k, const FeatureMap& grad_out) {
  detail::check_kernel(k);
  detail::require(input.channels() == k.in_channels, "conv2d_backward: input channel mismatch");
  const auto g = detail::ConvGeometry::make(input.rows(), input.cols(), k.kh, k.kw, k.stride);
  detail::require(grad_out.rows() == g.out_rows && grad_out.cols() == g.out_cols &&
                      grad_out.channels() == k.out_channels,
                  "conv2d_backward: grad_out shape " + grad_out.shape() + " does not match conv output " +
                      FeatureMap::shape_string(g.out_rows, g.out_cols, k.out_channels));
  const int K = g.patch_len(k.in_channels);
  const detail::RowMatrix cols = detail::im2col(input, g);
  detail::ConstRowMap gy(grad_out.data(), g.out_pixels(), k.out_channels);
  detail::ConstRowMap w(k.weights.data(), K, k.out_channels);

  ConvGrad grad;
  grad.weights.assign(k.weight_count(), 0.0);
  detail::RowMap gw(grad.weights.data(), K, k.out_channels);
  gw.noalias() = cols.transpose() * gy;

  detail::RowMatrix gcols(g.out_pixels(), K);
  gcols.noalias() = gy * w.transpose();
  grad.input = detail::col2im(gcols, g, k.in_channels);

  if (k.has_bias()) grad.bias = detail::channel_sums(grad_out);
  return grad;
}

/// Transposed convolution: the exact adjoint of a strided "same" conv2d.
/// Stride 2 doubles the spatial size, stride 1 preserves it.
inline FeatureMap deconv2d(const FeatureMap& input, const ConvKernel& k) {
  detail::check_kernel(k);
  if (input.channels() != k.in_channels)
    throw ConfigError("deconv2d: input has " + std::to_string(input.channels()) + " channels, kernel expects " +
                      std::to_string(k.in_channels));
  const auto g = detail::ConvGeometry::make(input.rows() * k.stride, input.cols() * k.stride, k.kh, k.kw, k.stride);
  const int K = g.patch_len(k.out_channels);
  detail::ConstRowMap x(input.data(), g.out_pixels(), k.in_channels);
  detail::ConstRowMap w(k.weights.data(), K, k.in_channels);
  detail::RowMatrix cols(g.out_pixels(), K);
  cols.noalias() = x * w.transpose();
  FeatureMap out = detail::col2im(cols, g, k.out_channels);
  detail::add_bias(out, k.bias);
  return out;
}

inline ConvGrad deconv2d_backward(const FeatureMap& input, const ConvKernel& k, const FeatureMap& grad_out) {
  detail::check_kernel(k);
  detail::require(input.channels() == k.in_channels, "deconv2d_backward: input channel mismatch");
  const auto g = detail::ConvGeometry::make(input.rows() * k.stride, input.cols() * k.stride, k.kh, k.kw, k.stride);
  detail::require(grad_out.rows() == g.in_rows && grad_out.cols() == g.in_cols &&
                      grad_out.channels() == k.out_channels,
                  "deconv2d_backward: grad_out shape " + grad_out.shape() + " does not match deconv output");
  const int K = g.patch_len(k.out_channels);
  const detail::RowMatrix gcols = detail::im2col(grad_out, g);
  detail::ConstRowMap x(input.data(), g.out_pixels(), k.in_channels);
  detail::ConstRowMap w(k.weights.data(), K, k.in_channels);

  ConvGrad grad;
  grad.input = FeatureMap(input.rows(), input.cols(), input.channels());
  detail::RowMap gx(grad.input.data(), g.out_pixels(), k.in_channels);
  gx.noalias() = gcols * w;

  grad.weights.assign(k.weight_count(), 0.0);
  detail::RowMap gw(grad.weights.data(), K, k.in_channels);
  gw.noalias() = gcols.transpose() * x;

  if (k.has_bias()) grad.bias = detail::channel_sums(grad_out);
  return grad;
}

}  // namespace stcl
