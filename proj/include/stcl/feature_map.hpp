#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stcl/error.hpp"

namespace stcl {

/// Rank-3 array of doubles laid out row-major as (row, col, channel).
///
/// This is the carrier for every image, gate and state tensor in the
/// library. Operations in this header never mutate their inputs.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int rows, int cols, int channels, double fill = 0.0)
      : rows_(rows), cols_(cols), channels_(channels) {
    if (rows <= 0 || cols <= 0 || channels <= 0) {
      throw ConfigError("FeatureMap dimensions must be positive, got " + shape_string(rows, cols, channels));
    }
    data_.assign(static_cast<std::size_t>(rows) * cols * channels, fill);
  }
  FeatureMap(int rows, int cols, int channels, std::vector<double> data)
      : rows_(rows), cols_(cols), channels_(channels), data_(std::move(data)) {
    if (rows <= 0 || cols <= 0 || channels <= 0) {
      throw ConfigError("FeatureMap dimensions must be positive, got " + shape_string(rows, cols, channels));
    }
    detail::require(data_.size() == static_cast<std::size_t>(rows) * cols * channels,
                    "FeatureMap data length does not match " + shape_string(rows, cols, channels));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int r, int c, int ch) { return data_[index(r, c, ch)]; }
  double at(int r, int c, int ch) const { return data_[index(r, c, ch)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const FeatureMap& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && channels_ == o.channels_;
  }
  std::string shape() const { return shape_string(rows_, cols_, channels_); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

  static std::string shape_string(int r, int c, int ch) {
    return std::to_string(r) + "x" + std::to_string(c) + "x" + std::to_string(ch);
  }

 private:
  std::size_t index(int r, int c, int ch) const {
    return (static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch;
  }

  int rows_ = 0;
  int cols_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline FeatureMap zeros_like(const FeatureMap& a) { return FeatureMap(a.rows(), a.cols(), a.channels()); }

namespace detail {

inline void require_same_shape(const FeatureMap& a, const FeatureMap& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

template <class F>
FeatureMap map_unary(const FeatureMap& a, F f) {
  FeatureMap out = zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
FeatureMap map_binary(const FeatureMap& a, const FeatureMap& b, const char* op, F f) {
  require_same_shape(a, b, op);
  FeatureMap out = zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace detail

// Activations. Backward functions take the forward *output* where that is
// the cheaper route (sigmoid, tanh) and the forward input for relu.

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline FeatureMap sigmoid(const FeatureMap& x) { return detail::map_unary(x, sigmoid_scalar); }
inline FeatureMap sigmoid_backward(const FeatureMap& y, const FeatureMap& grad_out) {
  return detail::map_binary(y, grad_out, "sigmoid_backward", [](double s, double g) { return g * s * (1.0 - s); });
}

inline FeatureMap tanh(const FeatureMap& x) {
  return detail::map_unary(x, [](double v) { return std::tanh(v); });
}
inline FeatureMap tanh_backward(const FeatureMap& y, const FeatureMap& grad_out) {
  return detail::map_binary(y, grad_out, "tanh_backward", [](double t, double g) { return g * (1.0 - t * t); });
}

inline FeatureMap relu(const FeatureMap& x) {
  return detail::map_unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
}
inline FeatureMap relu_backward(const FeatureMap& x, const FeatureMap& grad_out) {
  return detail::map_binary(x, grad_out, "relu_backward", [](double v, double g) { return v > 0.0 ? g : 0.0; });
}

inline FeatureMap hadamard(const FeatureMap& a, const FeatureMap& b) {
  return detail::map_binary(a, b, "hadamard", [](double x, double y) { return x * y; });
}
/// Gradients of hadamard(a, b) w.r.t. a and b.
struct HadamardGrad {
  FeatureMap a;
  FeatureMap b;
};
inline HadamardGrad hadamard_backward(const FeatureMap& a, const FeatureMap& b, const FeatureMap& grad_out) {
  return {hadamard(b, grad_out), hadamard(a, grad_out)};
}

inline FeatureMap add(const FeatureMap& a, const FeatureMap& b) {
  return detail::map_binary(a, b, "add", [](double x, double y) { return x + y; });
}
inline FeatureMap subtract(const FeatureMap& a, const FeatureMap& b) {
  return detail::map_binary(a, b, "subtract", [](double x, double y) { return x - y; });
}
inline FeatureMap scale(const FeatureMap& a, double k) {
  return detail::map_unary(a, [k](double v) { return v * k; });
}

/// In-place accumulation, used for gradient sums. Not part of the pure API.
inline void accumulate(FeatureMap& into, const FeatureMap& g) {
  detail::require_same_shape(into, g, "accumulate");
  for (std::size_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

inline FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  "concat_channels: spatial mismatch " + a.shape() + " vs " + b.shape());
  const int ca = a.channels();
  const int cb = b.channels();
  FeatureMap out(a.rows(), a.cols(), ca + cb);
  const std::size_t pixels = static_cast<std::size_t>(a.rows()) * a.cols();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < ca; ++c) out[p * (ca + cb) + c] = a[p * ca + c];
    for (int c = 0; c < cb; ++c) out[p * (ca + cb) + ca + c] = b[p * cb + c];
  }
  return out;
}

/// Channel range [first, first + count) of `a`.
inline FeatureMap slice_channels(const FeatureMap& a, int first, int count) {
  detail::require(first >= 0 && count > 0 && first + count <= a.channels(),
                  "slice_channels: range out of bounds for " + a.shape());
  FeatureMap out(a.rows(), a.cols(), count);
  const std::size_t pixels = static_cast<std::size_t>(a.rows()) * a.cols();
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < count; ++c) out[p * count + c] = a[p * a.channels() + first + c];
  return out;
}

/// Splits the gradient of concat_channels(a, b) back into its two parts.
struct ConcatGrad {
  FeatureMap a;
  FeatureMap b;
};
inline ConcatGrad concat_channels_backward(int channels_a, const FeatureMap& grad_out) {
  detail::require(channels_a > 0 && channels_a < grad_out.channels(), "concat_channels_backward: bad split point");
  return {slice_channels(grad_out, 0, channels_a),
          slice_channels(grad_out, channels_a, grad_out.channels() - channels_a)};
}

/// Sum of elementwise products.
inline double dot(const FeatureMap& a, const FeatureMap& b) {
  detail::require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace stcl
