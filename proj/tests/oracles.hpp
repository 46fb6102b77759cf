// Reference implementations written independently of the library, used as
// test oracles: plain loops, no shared helpers.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stcl/cells.hpp"
#include "stcl/conv.hpp"
#include "stcl/random.hpp"

namespace oracle {

using stcl::ConvKernel;
using stcl::FeatureMap;

// Six nested loops over output pixel, output channel, kernel tap and input
// channel. Padding follows the "same" rule: total = max((out-1)*s + k - in, 0),
// the smaller half on top/left.
inline FeatureMap conv2d(const FeatureMap& x, const ConvKernel& k) {
  const int out_r = (x.rows() + k.stride - 1) / k.stride;
  const int out_c = (x.cols() + k.stride - 1) / k.stride;
  const int pad_r = std::max((out_r - 1) * k.stride + k.kh - x.rows(), 0) / 2;
  const int pad_c = std::max((out_c - 1) * k.stride + k.kw - x.cols(), 0) / 2;
  FeatureMap y(out_r, out_c, k.out_channels);
  for (int r = 0; r < out_r; ++r)
    for (int c = 0; c < out_c; ++c)
      for (int o = 0; o < k.out_channels; ++o) {
        double acc = k.bias.empty() ? 0.0 : k.bias[o];
        for (int a = 0; a < k.kh; ++a)
          for (int b = 0; b < k.kw; ++b)
            for (int i = 0; i < k.in_channels; ++i) {
              const int rr = r * k.stride - pad_r + a, cc = c * k.stride - pad_c + b;
              if (rr < 0 || rr >= x.rows() || cc < 0 || cc >= x.cols()) continue;
              acc += x.at(rr, cc, i) * k.weights[((a * k.kw + b) * k.in_channels + i) * k.out_channels + o];
            }
        y.at(r, c, o) = acc;
      }
  return y;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Value of conv2d at one output pixel and channel for a stride-1 3x3 "same"
// kernel, without bias.
inline double tap(const FeatureMap& x, const ConvKernel& k, int r, int c, int o) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < x.channels(); ++i) {
        const int rr = r - 1 + a, cc = c - 1 + b;
        if (rr < 0 || rr >= x.rows() || cc < 0 || cc >= x.cols()) continue;
        acc += x.at(rr, cc, i) * k.weights[((a * 3 + b) * x.channels() + i) * k.out_channels + o];
      }
  return acc;
}

inline FeatureMap random_map(stcl::Rng& rng, int r, int c, int ch, double lo = -1.0, double hi = 1.0) {
  FeatureMap m(r, c, ch);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
  return m;
}

inline void randomize(ConvKernel& k, stcl::Rng& rng, double scale = 0.5) {
  for (double& w : k.weights) w = rng.uniform(-scale, scale);
  for (double& b : k.bias) b = rng.uniform(-scale, scale);
}

inline double max_abs_diff(const FeatureMap& a, const FeatureMap& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Scalar transcription of the ConvLSTM step, written per pixel and gate
// from the cell equations. Gate order in the packed kernels: f, i, C~, o.
inline stcl::CellState convlstm(const FeatureMap& x, const stcl::CellState& prev, const stcl::ConvLstmParams& p) {
  const int F = p.hidden_channels();
  stcl::CellState out = stcl::CellState::zero(x.rows(), x.cols(), F);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c)
      for (int k = 0; k < F; ++k) {
        auto z = [&](int g) {
          return tap(x, p.input, r, c, g * F + k) + tap(prev.hidden, p.hidden, r, c, g * F + k) + p.input.bias[g * F + k];
        };
        const double f = sigmoid(z(0));
        const double i = sigmoid(z(1));
        const double cand = std::tanh(z(2));
        const double o = sigmoid(z(3));
        const double cell = f * prev.cell.at(r, c, k) + i * cand;
        out.cell.at(r, c, k) = cell;
        out.hidden.at(r, c, k) = o * std::tanh(cell);
      }
  return out;
}

// Scalar transcription of the ST-ConvLSTM step. Gate order: f^S, f^T, i, C~, o.
inline stcl::CellState st_convlstm(const FeatureMap& x, const stcl::CellState& sp, const stcl::CellState& tp,
                                   const stcl::StConvLstmParams& p) {
  const int F = p.hidden_channels();
  stcl::CellState out = stcl::CellState::zero(x.rows(), x.cols(), F);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c)
      for (int k = 0; k < F; ++k) {
        auto z = [&](int g) {
          const int o = g * F + k;
          return tap(x, p.input, r, c, o) + tap(sp.hidden, p.spatial, r, c, o) + tap(tp.hidden, p.temporal, r, c, o) +
                 p.input.bias[o];
        };
        const double fs = sigmoid(z(0));
        const double ft = sigmoid(z(1));
        const double i = sigmoid(z(2));
        const double cand = std::tanh(z(3));
        const double o = sigmoid(z(4));
        const double cell = fs * sp.cell.at(r, c, k) + ft * tp.cell.at(r, c, k) + i * cand;
        out.cell.at(r, c, k) = cell;
        out.hidden.at(r, c, k) = o * std::tanh(cell);
      }
  return out;
}

// Copies the output channels of `src` listed in `keep` into a new kernel.
inline ConvKernel select_outputs(const ConvKernel& src, const std::vector<int>& keep) {
  ConvKernel k(src.kh, src.kw, src.in_channels, static_cast<int>(keep.size()), src.stride, src.has_bias());
  const int n = static_cast<int>(keep.size());
  for (int t = 0; t < src.kh * src.kw * src.in_channels; ++t)
    for (int j = 0; j < n; ++j) k.weights[t * n + j] = src.weights[t * src.out_channels + keep[j]];
  if (src.has_bias())
    for (int j = 0; j < n; ++j) k.bias[j] = src.bias[keep[j]];
  return k;
}

// The ConvLSTM an ST-ConvLSTM degenerates to once its spatial pathway is
// gone: f^T plays f and the temporal kernel plays W_h.
inline stcl::ConvLstmParams reduced_convlstm(const stcl::StConvLstmParams& p) {
  const int F = p.hidden_channels();
  std::vector<int> keep;
  for (int g : {1, 2, 3, 4})
    for (int k = 0; k < F; ++k) keep.push_back(g * F + k);
  return {select_outputs(p.input, keep), select_outputs(p.temporal, keep)};
}

inline double max_abs_diff(const stcl::CellState& a, const stcl::CellState& b) {
  return std::max(max_abs_diff(a.cell, b.cell), max_abs_diff(a.hidden, b.hidden));
}

// One random instance of the reduction check: worst |difference| between
// the ST cell with a zeroed spatial pathway and the reduced ConvLSTM.
inline double reduction_gap(stcl::Rng& rng) {
  const int R = rng.uniform_int(1, 8), C = rng.uniform_int(1, 8);
  const int Fx = rng.uniform_int(1, 4), F = rng.uniform_int(1, 4);
  stcl::StConvLstmParams p = stcl::StConvLstmParams::zeros(Fx, F);
  randomize(p.input, rng, 1.0);
  randomize(p.temporal, rng, 1.0);
  const FeatureMap x = random_map(rng, R, C, Fx);
  const stcl::CellState tp{random_map(rng, R, C, F, -2.0, 2.0), random_map(rng, R, C, F)};
  const stcl::CellState zero = stcl::CellState::zero(R, C, F);
  return max_abs_diff(stcl::st_convlstm_step(x, zero, tp, p), stcl::convlstm_step(x, tp, reduced_convlstm(p)));
}

}  // namespace oracle
