#pragma once

#include <string>

#include "stcl/conv.hpp"
#include "stcl/error.hpp"
#include "stcl/feature_map.hpp"

namespace stcl {

/// Memory cell C and hidden state H of one recurrent unit.
struct CellState {
  FeatureMap cell;
  FeatureMap hidden;

  /// The all-zero state fed to units without a predecessor.
  static CellState zero(int rows, int cols, int channels) {
    return {FeatureMap(rows, cols, channels), FeatureMap(rows, cols, channels)};
  }
  friend bool operator==(const CellState&, const CellState&) = default;
};

inline void accumulate_kernel(ConvKernel& into, const ConvGrad& g) {
  for (std::size_t i = 0; i < g.weights.size(); ++i) into.weights[i] += g.weights[i];
  for (std::size_t i = 0; i < g.bias.size(); ++i) into.bias[i] += g.bias[i];
}

namespace detail {

inline void check_gate_kernel(const ConvKernel& k, int in, int gates, int hidden, const char* name) {
  k.validate();
  if (k.kh != 3 || k.kw != 3) throw ConfigError(std::string(name) + ": cell kernels must be 3x3");
  if (k.stride != 1) throw ConfigError(std::string(name) + ": cell kernels must have stride 1");
  if (k.in_channels != in || k.out_channels != gates * hidden)
    throw ConfigError(std::string(name) + ": expected " + std::to_string(in) + " -> " +
                      std::to_string(gates * hidden) + " channels");
}

inline void check_state(const CellState& s, const FeatureMap& x, int hidden, const char* what) {
  require(s.cell.same_shape(s.hidden), std::string(what) + ": cell/hidden shape mismatch");
  require(s.hidden.rows() == x.rows() && s.hidden.cols() == x.cols() && s.hidden.channels() == hidden,
          std::string(what) + ": state " + s.hidden.shape() + " incompatible with input " + x.shape());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ConvLSTM

/// Kernels of the four ConvLSTM gates, packed along the output channels in
/// the order f, i, C~, o: gate g owns channels [g*F, (g+1)*F).
struct ConvLstmParams {
  static constexpr int kGates = 4;
  ConvKernel input;   // W_x*, carries the gate biases
  ConvKernel hidden;  // W_h*, no bias

  int hidden_channels() const { return input.out_channels / kGates; }
  int input_channels() const { return input.in_channels; }

  static ConvLstmParams zeros(int input_channels, int hidden_channels) {
    return {ConvKernel(3, 3, input_channels, kGates * hidden_channels, 1, true),
            ConvKernel(3, 3, hidden_channels, kGates * hidden_channels, 1, false)};
  }
  void validate() const {
    const int f = hidden_channels();
    if (f <= 0 || input.out_channels % kGates != 0) throw ConfigError("ConvLSTM: bad gate channel count");
    detail::check_gate_kernel(input, input.in_channels, kGates, f, "ConvLSTM input kernel");
    detail::check_gate_kernel(hidden, f, kGates, f, "ConvLSTM hidden kernel");
  }
  template <class F>
  void for_each_kernel(F&& f) {
    f("input", input);
    f("hidden", hidden);
  }
  friend bool operator==(const ConvLstmParams&, const ConvLstmParams&) = default;
};

struct ConvLstmCache {
  FeatureMap x;
  CellState prev;
  FeatureMap gates;  // activated, 4F channels
  FeatureMap tanh_cell;
  CellState out;
};

inline ConvLstmCache convlstm_forward(const FeatureMap& x, const CellState& prev, const ConvLstmParams& p) {
  p.validate();
  const int F = p.hidden_channels();
  if (x.channels() != p.input_channels()) throw ConfigError("convlstm_step: input channel mismatch");
  detail::check_state(prev, x, F, "convlstm_step");

  FeatureMap pre = add(conv2d(x, p.input), conv2d(prev.hidden, p.hidden));
  ConvLstmCache c{x, prev, FeatureMap(x.rows(), x.cols(), 4 * F), FeatureMap(x.rows(), x.cols(), F),
                  CellState::zero(x.rows(), x.cols(), F)};
  const std::size_t pixels = static_cast<std::size_t>(x.rows()) * x.cols();
  for (std::size_t px = 0; px < pixels; ++px) {
    const double* z = pre.data() + px * 4 * F;
    double* gate = c.gates.data() + px * 4 * F;
    for (int k = 0; k < F; ++k) {
      const double f = sigmoid_scalar(z[k]);
      const double i = sigmoid_scalar(z[F + k]);
      const double g = std::tanh(z[2 * F + k]);
      const double o = sigmoid_scalar(z[3 * F + k]);
      gate[k] = f;
      gate[F + k] = i;
      gate[2 * F + k] = g;
      gate[3 * F + k] = o;
      const double cell = f * prev.cell[px * F + k] + i * g;
      const double tc = std::tanh(cell);
      c.out.cell[px * F + k] = cell;
      c.tanh_cell[px * F + k] = tc;
      c.out.hidden[px * F + k] = o * tc;
    }
  }
  return c;
}

/// One ConvLSTM step:
///   f = σ(W_xf*X + W_hf*H + b_f), i = σ(...), C~ = tanh(...), o = σ(...)
///   C = f⊙C_prev + i⊙C~,  H = o⊙tanh(C)
inline CellState convlstm_step(const FeatureMap& x, const CellState& prev, const ConvLstmParams& p) {
  return convlstm_forward(x, prev, p).out;
}

struct ConvLstmBackward {
  FeatureMap x;
  CellState prev;
};

/// Backward through one ConvLSTM step. `grad_cell` and `grad_hidden` are
/// the upstream gradients on the step's outputs; parameter gradients are
/// added into `param_grads`.
inline ConvLstmBackward convlstm_backward(const ConvLstmCache& c, const ConvLstmParams& p,
                                          const FeatureMap& grad_cell, const FeatureMap& grad_hidden,
                                          ConvLstmParams& param_grads) {
  detail::require(!c.gates.empty(), "convlstm_backward: forward cache missing");
  detail::require_same_shape(grad_cell, c.out.cell, "convlstm_backward");
  detail::require_same_shape(grad_hidden, c.out.hidden, "convlstm_backward");
  const int F = p.hidden_channels();
  const std::size_t pixels = static_cast<std::size_t>(c.x.rows()) * c.x.cols();
  FeatureMap dpre(c.x.rows(), c.x.cols(), 4 * F);
  FeatureMap dprev_cell = zeros_like(c.prev.cell);
  for (std::size_t px = 0; px < pixels; ++px) {
    const double* gate = c.gates.data() + px * 4 * F;
    double* d = dpre.data() + px * 4 * F;
    for (int k = 0; k < F; ++k) {
      const std::size_t e = px * F + k;
      const double f = gate[k], i = gate[F + k], g = gate[2 * F + k], o = gate[3 * F + k];
      const double tc = c.tanh_cell[e];
      const double dh = grad_hidden[e];
      const double dc = grad_cell[e] + dh * o * (1.0 - tc * tc);
      d[k] = dc * c.prev.cell[e] * f * (1.0 - f);
      d[F + k] = dc * g * i * (1.0 - i);
      d[2 * F + k] = dc * i * (1.0 - g * g);
      d[3 * F + k] = dh * tc * o * (1.0 - o);
      dprev_cell[e] = dc * f;
    }
  }
  ConvGrad gx = conv2d_backward(c.x, p.input, dpre);
  ConvGrad gh = conv2d_backward(c.prev.hidden, p.hidden, dpre);
  accumulate_kernel(param_grads.input, gx);
  accumulate_kernel(param_grads.hidden, gh);
  return {std::move(gx.input), {std::move(dprev_cell), std::move(gh.input)}};
}

// ---------------------------------------------------------------------------
// ST-ConvLSTM

/// Kernels of the five ST-ConvLSTM gates packed in the order
/// f^S, f^T, i, C~, o. Each gate sees the input, the spatial predecessor's
/// hidden state H_{s-1,t} and the temporal predecessor's H_{s,t-1}.
struct StConvLstmParams {
  static constexpr int kGates = 5;
  enum Gate { kForgetSpatial = 0, kForgetTemporal = 1, kInput = 2, kCandidate = 3, kOutput = 4 };

  ConvKernel input;     // W_x*, carries the gate biases
  ConvKernel spatial;   // W_{h_s}*
  ConvKernel temporal;  // W_{h_t}*

  int hidden_channels() const { return input.out_channels / kGates; }
  int input_channels() const { return input.in_channels; }

  static StConvLstmParams zeros(int input_channels, int hidden_channels) {
    return {ConvKernel(3, 3, input_channels, kGates * hidden_channels, 1, true),
            ConvKernel(3, 3, hidden_channels, kGates * hidden_channels, 1, false),
            ConvKernel(3, 3, hidden_channels, kGates * hidden_channels, 1, false)};
  }
  StConvLstmParams zeros_like() const { return zeros(input.in_channels, input.out_channels / kGates); }
  void validate() const {
    const int f = hidden_channels();
    if (f <= 0 || input.out_channels % kGates != 0) throw ConfigError("ST-ConvLSTM: bad gate channel count");
    detail::check_gate_kernel(input, input.in_channels, kGates, f, "ST-ConvLSTM input kernel");
    detail::check_gate_kernel(spatial, f, kGates, f, "ST-ConvLSTM spatial kernel");
    detail::check_gate_kernel(temporal, f, kGates, f, "ST-ConvLSTM temporal kernel");
  }
  template <class F>
  void for_each_kernel(F&& f) {
    f("input", input);
    f("spatial", spatial);
    f("temporal", temporal);
  }
  template <class F>
  void for_each_kernel(F&& f) const {
    f("input", input);
    f("spatial", spatial);
    f("temporal", temporal);
  }
  friend bool operator==(const StConvLstmParams&, const StConvLstmParams&) = default;
};

struct StCellCache {
  FeatureMap x;
  CellState spatial_prev;
  CellState temporal_prev;
  FeatureMap gates;  // activated, 5F channels
  FeatureMap tanh_cell;
  CellState out;
};

inline StCellCache st_convlstm_forward(const FeatureMap& x, const CellState& spatial_prev,
                                       const CellState& temporal_prev, const StConvLstmParams& p) {
  p.validate();
  const int F = p.hidden_channels();
  if (x.channels() != p.input_channels())
    throw ConfigError("st_convlstm_step: input has " + std::to_string(x.channels()) + " channels, expected " +
                      std::to_string(p.input_channels()));
  detail::check_state(spatial_prev, x, F, "st_convlstm_step spatial predecessor");
  detail::check_state(temporal_prev, x, F, "st_convlstm_step temporal predecessor");

  FeatureMap pre = conv2d(x, p.input);
  accumulate(pre, conv2d(spatial_prev.hidden, p.spatial));
  accumulate(pre, conv2d(temporal_prev.hidden, p.temporal));

  StCellCache c{x,
                spatial_prev,
                temporal_prev,
                FeatureMap(x.rows(), x.cols(), 5 * F),
                FeatureMap(x.rows(), x.cols(), F),
                CellState::zero(x.rows(), x.cols(), F)};
  const std::size_t pixels = static_cast<std::size_t>(x.rows()) * x.cols();
  for (std::size_t px = 0; px < pixels; ++px) {
    const double* z = pre.data() + px * 5 * F;
    double* gate = c.gates.data() + px * 5 * F;
    for (int k = 0; k < F; ++k) {
      const double fs = sigmoid_scalar(z[k]);
      const double ft = sigmoid_scalar(z[F + k]);
      const double i = sigmoid_scalar(z[2 * F + k]);
      const double g = std::tanh(z[3 * F + k]);
      const double o = sigmoid_scalar(z[4 * F + k]);
      gate[k] = fs;
      gate[F + k] = ft;
      gate[2 * F + k] = i;
      gate[3 * F + k] = g;
      gate[4 * F + k] = o;
      const std::size_t e = px * F + k;
      const double cell = fs * spatial_prev.cell[e] + ft * temporal_prev.cell[e] + i * g;
      const double tc = std::tanh(cell);
      c.out.cell[e] = cell;
      c.tanh_cell[e] = tc;
      c.out.hidden[e] = o * tc;
    }
  }
  return c;
}

/// One ST-ConvLSTM step at grid unit (s, t):
///   C = f^S⊙C_{s-1,t} + f^T⊙C_{s,t-1} + i⊙C~,  H = o⊙tanh(C)
/// with every gate driven by X_{s,t}, H_{s-1,t} and H_{s,t-1}.
inline CellState st_convlstm_step(const FeatureMap& x, const CellState& spatial_prev, const CellState& temporal_prev,
                                  const StConvLstmParams& p) {
  return st_convlstm_forward(x, spatial_prev, temporal_prev, p).out;
}

/// Gradients flowing out of one ST-ConvLSTM step.
struct StCellBackward {
  FeatureMap x;
  CellState spatial;
  CellState temporal;
};

inline StCellBackward st_convlstm_backward(const StCellCache& c, const StConvLstmParams& p,
                                           const FeatureMap& grad_cell, const FeatureMap& grad_hidden,
                                           StConvLstmParams& param_grads) {
  detail::require(!c.gates.empty(), "st_convlstm_backward: forward cache missing");
  detail::require_same_shape(grad_cell, c.out.cell, "st_convlstm_backward");
  detail::require_same_shape(grad_hidden, c.out.hidden, "st_convlstm_backward");
  const int F = p.hidden_channels();
  const std::size_t pixels = static_cast<std::size_t>(c.x.rows()) * c.x.cols();
  FeatureMap dpre(c.x.rows(), c.x.cols(), 5 * F);
  FeatureMap d_spatial_cell = zeros_like(c.out.cell);
  FeatureMap d_temporal_cell = zeros_like(c.out.cell);
  for (std::size_t px = 0; px < pixels; ++px) {
    const double* gate = c.gates.data() + px * 5 * F;
    double* d = dpre.data() + px * 5 * F;
    for (int k = 0; k < F; ++k) {
      const std::size_t e = px * F + k;
      const double fs = gate[k], ft = gate[F + k], i = gate[2 * F + k], g = gate[3 * F + k], o = gate[4 * F + k];
      const double tc = c.tanh_cell[e];
      const double dh = grad_hidden[e];
      const double dc = grad_cell[e] + dh * o * (1.0 - tc * tc);
      d[k] = dc * c.spatial_prev.cell[e] * fs * (1.0 - fs);
      d[F + k] = dc * c.temporal_prev.cell[e] * ft * (1.0 - ft);
      d[2 * F + k] = dc * g * i * (1.0 - i);
      d[3 * F + k] = dc * i * (1.0 - g * g);
      d[4 * F + k] = dh * tc * o * (1.0 - o);
      d_spatial_cell[e] = dc * fs;
      d_temporal_cell[e] = dc * ft;
    }
  }
  ConvGrad gx = conv2d_backward(c.x, p.input, dpre);
  ConvGrad gs = conv2d_backward(c.spatial_prev.hidden, p.spatial, dpre);
  ConvGrad gt = conv2d_backward(c.temporal_prev.hidden, p.temporal, dpre);
  accumulate_kernel(param_grads.input, gx);
  accumulate_kernel(param_grads.spatial, gs);
  accumulate_kernel(param_grads.temporal, gt);
  return {std::move(gx.input), {std::move(d_spatial_cell), std::move(gs.input)},
          {std::move(d_temporal_cell), std::move(gt.input)}};
}

}  // namespace stcl
