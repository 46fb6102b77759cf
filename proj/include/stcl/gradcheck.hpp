#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "stcl/cells.hpp"
#include "stcl/conv.hpp"
#include "stcl/feature_map.hpp"
#include "stcl/network.hpp"
#include "stcl/random.hpp"
#include "stcl/training.hpp"

namespace stcl {

/// Worst-case disagreement between two gradient arrays relative to their
/// magnitude: max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|).
///
/// Normalizing each entry by its own magnitude would be dominated by
/// components that cross zero, where central differences only resolve
/// rounding noise; normalizing by the array's scale keeps the measure
/// meaningful. Two all-zero arrays agree exactly.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  detail::require(analytic.size() == numeric.size(), "relative_error: size mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  if (scale == 0.0) return 0.0;
  return diff / scale;
}

/// Central differences of `loss` w.r.t. each entry of `x`; `x` is restored.
inline std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& loss,
                                            double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = loss();
    x[i] = saved - step;
    const double down = loss();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Compares `analytic` against central differences of `loss` w.r.t. `x`.
inline double check_gradient(std::span<double> x, std::span<const double> analytic, const std::function<double()>& loss,
                             double step = 1e-5) {
  detail::require(x.size() == analytic.size(), "check_gradient: size mismatch");
  const std::vector<double> numeric = numeric_gradient(x, loss, step);
  return relative_error(analytic, numeric);
}

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

namespace detail {

inline FeatureMap random_map(Rng& rng, int r, int c, int ch, double lo = -1.0, double hi = 1.0) {
  FeatureMap m(r, c, ch);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

/// Values bounded away from zero so ReLU's kink is never straddled by a
/// finite-difference probe.
inline FeatureMap random_map_away_from_zero(Rng& rng, int r, int c, int ch) {
  FeatureMap m(r, c, ch);
  for (double& v : m.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return m;
}

inline void randomize(ConvKernel& k, Rng& rng, double scale = 0.5) {
  for (double& w : k.weights) w = rng.uniform(-scale, scale);
  for (double& b : k.bias) b = rng.uniform(-scale, scale);
}

inline GradCheckResult record(std::vector<GradCheckResult>& out, std::string name, double err, std::size_t n) {
  out.push_back({std::move(name), err, n});
  return out.back();
}

}  // namespace detail

/// Finite-difference checks of every tensor primitive's backward pass.
inline std::vector<GradCheckResult> gradcheck_primitives(std::uint64_t seed, double step = 1e-5) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;

  for (int stride : {1, 2}) {
    FeatureMap x = detail::random_map(rng, 6, 7, 2);
    ConvKernel k(3, 3, 2, 3, stride);
    detail::randomize(k, rng);
    const FeatureMap probe = detail::random_map(rng, conv_output_size(6, stride), conv_output_size(7, stride), 3);
    auto loss = [&] { return dot(conv2d(x, k), probe); };
    const ConvGrad g = conv2d_backward(x, k, probe);
    const std::string tag = "conv2d(stride " + std::to_string(stride) + ")";
    detail::record(out, tag + " input", check_gradient(x.values(), g.input.values(), loss, step), x.size());
    detail::record(out, tag + " weights", check_gradient(k.weights, g.weights, loss, step), k.weights.size());
    detail::record(out, tag + " bias", check_gradient(k.bias, g.bias, loss, step), k.bias.size());
  }
  for (int stride : {1, 2}) {
    FeatureMap x = detail::random_map(rng, 4, 3, 2);
    ConvKernel k(3, 3, 2, 3, stride);
    detail::randomize(k, rng);
    const FeatureMap probe = detail::random_map(rng, 4 * stride, 3 * stride, 3);
    auto loss = [&] { return dot(deconv2d(x, k), probe); };
    const ConvGrad g = deconv2d_backward(x, k, probe);
    const std::string tag = "deconv2d(stride " + std::to_string(stride) + ")";
    detail::record(out, tag + " input", check_gradient(x.values(), g.input.values(), loss, step), x.size());
    detail::record(out, tag + " weights", check_gradient(k.weights, g.weights, loss, step), k.weights.size());
    detail::record(out, tag + " bias", check_gradient(k.bias, g.bias, loss, step), k.bias.size());
  }
  {
    FeatureMap x = detail::random_map(rng, 3, 4, 2, -3.0, 3.0);
    const FeatureMap probe = detail::random_map(rng, 3, 4, 2);
    const FeatureMap gs = sigmoid_backward(sigmoid(x), probe);
    detail::record(out, "sigmoid",
                   check_gradient(x.values(), gs.values(), [&] { return dot(sigmoid(x), probe); }, step), x.size());
    const FeatureMap gt = tanh_backward(tanh(x), probe);
    detail::record(out, "tanh", check_gradient(x.values(), gt.values(), [&] { return dot(tanh(x), probe); }, step),
                   x.size());
    FeatureMap xr = detail::random_map_away_from_zero(rng, 3, 4, 2);
    const FeatureMap gr = relu_backward(xr, probe);
    detail::record(out, "relu", check_gradient(xr.values(), gr.values(), [&] { return dot(relu(xr), probe); }, step),
                   xr.size());
  }
  {
    FeatureMap a = detail::random_map(rng, 3, 3, 2);
    FeatureMap b = detail::random_map(rng, 3, 3, 2);
    const FeatureMap probe = detail::random_map(rng, 3, 3, 2);
    const HadamardGrad gh = hadamard_backward(a, b, probe);
    auto lh = [&] { return dot(hadamard(a, b), probe); };
    detail::record(out, "hadamard a", check_gradient(a.values(), gh.a.values(), lh, step), a.size());
    detail::record(out, "hadamard b", check_gradient(b.values(), gh.b.values(), lh, step), b.size());
    auto la = [&] { return dot(add(a, b), probe); };
    detail::record(out, "add a", check_gradient(a.values(), probe.values(), la, step), a.size());
    detail::record(out, "add b", check_gradient(b.values(), probe.values(), la, step), b.size());
  }
  {
    FeatureMap a = detail::random_map(rng, 3, 2, 2);
    FeatureMap b = detail::random_map(rng, 3, 2, 3);
    const FeatureMap probe = detail::random_map(rng, 3, 2, 5);
    const ConcatGrad g = concat_channels_backward(2, probe);
    auto loss = [&] { return dot(concat_channels(a, b), probe); };
    detail::record(out, "concat a", check_gradient(a.values(), g.a.values(), loss, step), a.size());
    detail::record(out, "concat b", check_gradient(b.values(), g.b.values(), loss, step), b.size());
  }
  return out;
}

/// Finite-difference checks of both recurrent cells: gradients w.r.t. the
/// input, every predecessor state and every kernel.
inline std::vector<GradCheckResult> gradcheck_cells(std::uint64_t seed, double step = 1e-5) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  const int R = 4, C = 5, Fx = 3, F = 2;
  {
    FeatureMap x = detail::random_map(rng, R, C, Fx);
    CellState prev{detail::random_map(rng, R, C, F), detail::random_map(rng, R, C, F, -0.9, 0.9)};
    ConvLstmParams p = ConvLstmParams::zeros(Fx, F);
    p.for_each_kernel([&](const std::string&, ConvKernel& k) { detail::randomize(k, rng); });
    const FeatureMap rc = detail::random_map(rng, R, C, F);
    const FeatureMap rh = detail::random_map(rng, R, C, F);
    auto loss = [&] {
      const CellState s = convlstm_step(x, prev, p);
      return dot(s.cell, rc) + dot(s.hidden, rh);
    };
    ConvLstmParams pg = ConvLstmParams::zeros(Fx, F);
    const ConvLstmBackward g = convlstm_backward(convlstm_forward(x, prev, p), p, rc, rh, pg);
    detail::record(out, "convlstm x", check_gradient(x.values(), g.x.values(), loss, step), x.size());
    detail::record(out, "convlstm C_prev", check_gradient(prev.cell.values(), g.prev.cell.values(), loss, step),
                   prev.cell.size());
    detail::record(out, "convlstm H_prev", check_gradient(prev.hidden.values(), g.prev.hidden.values(), loss, step),
                   prev.hidden.size());
    detail::record(out, "convlstm W_x", check_gradient(p.input.weights, pg.input.weights, loss, step),
                   p.input.weights.size());
    detail::record(out, "convlstm b", check_gradient(p.input.bias, pg.input.bias, loss, step), p.input.bias.size());
    detail::record(out, "convlstm W_h", check_gradient(p.hidden.weights, pg.hidden.weights, loss, step),
                   p.hidden.weights.size());
  }
  {
    FeatureMap x = detail::random_map(rng, R, C, Fx);
    CellState sp{detail::random_map(rng, R, C, F), detail::random_map(rng, R, C, F, -0.9, 0.9)};
    CellState tp{detail::random_map(rng, R, C, F), detail::random_map(rng, R, C, F, -0.9, 0.9)};
    StConvLstmParams p = StConvLstmParams::zeros(Fx, F);
    p.for_each_kernel([&](const std::string&, ConvKernel& k) { detail::randomize(k, rng); });
    const FeatureMap rc = detail::random_map(rng, R, C, F);
    const FeatureMap rh = detail::random_map(rng, R, C, F);
    auto loss = [&] {
      const CellState s = st_convlstm_step(x, sp, tp, p);
      return dot(s.cell, rc) + dot(s.hidden, rh);
    };
    StConvLstmParams pg = StConvLstmParams::zeros(Fx, F);
    const StCellBackward g = st_convlstm_backward(st_convlstm_forward(x, sp, tp, p), p, rc, rh, pg);
    detail::record(out, "st_convlstm x", check_gradient(x.values(), g.x.values(), loss, step), x.size());
    detail::record(out, "st_convlstm C_spatial", check_gradient(sp.cell.values(), g.spatial.cell.values(), loss, step),
                   sp.cell.size());
    detail::record(out, "st_convlstm H_spatial",
                   check_gradient(sp.hidden.values(), g.spatial.hidden.values(), loss, step), sp.hidden.size());
    detail::record(out, "st_convlstm C_temporal",
                   check_gradient(tp.cell.values(), g.temporal.cell.values(), loss, step), tp.cell.size());
    detail::record(out, "st_convlstm H_temporal",
                   check_gradient(tp.hidden.values(), g.temporal.hidden.values(), loss, step), tp.hidden.size());
    detail::record(out, "st_convlstm W_x", check_gradient(p.input.weights, pg.input.weights, loss, step),
                   p.input.weights.size());
    detail::record(out, "st_convlstm b", check_gradient(p.input.bias, pg.input.bias, loss, step),
                   p.input.bias.size());
    detail::record(out, "st_convlstm W_hs", check_gradient(p.spatial.weights, pg.spatial.weights, loss, step),
                   p.spatial.weights.size());
    detail::record(out, "st_convlstm W_ht", check_gradient(p.temporal.weights, pg.temporal.weights, loss, step),
                   p.temporal.weights.size());
  }
  return out;
}

/// Tiny prediction network: 8x8x3 frames, 4x4x2 bottleneck, 2 hidden states.
inline NetworkConfig tiny_prediction_config() {
  NetworkConfig c;
  c.input_size = 8;
  c.encoder_channels = {3, 4, 3, 2};
  c.encoder_strides = {2, 1, 1, 1};
  c.hidden_channels = 2;
  c.factor_dim = 1;
  c.mirror_decoder();
  return c;
}

/// Tiny segmentation network: 8x8x1 frames, 2x2x3 bottleneck.
inline NetworkConfig tiny_segmentation_config() {
  NetworkConfig c = NetworkConfig::segmentation();
  c.input_size = 8;
  c.encoder_channels = {2, 3, 3, 3};
  c.encoder_strides = {2, 2, 1, 1};
  c.hidden_channels = 3;
  c.mirror_decoder();
  return c;
}

/// Random training sample for `cfg` with `slices` x `columns` units.
inline TrainingSample random_sample(const NetworkConfig& cfg, int slices, int columns, Rng& rng) {
  TrainingSample s;
  s.input.slices = slices;
  s.input.columns = columns;
  for (int i = 0; i < slices * columns; ++i)
    s.input.frames.push_back(detail::random_map(rng, cfg.input_size, cfg.input_size, cfg.input_channels, 0.0, 1.0));
  if (cfg.factor_dim > 0)
    for (int t = 0; t < columns; ++t) s.input.factor_days.push_back(rng.uniform(168.0, 804.0));
  for (int i = 0; i < slices * columns; ++i) {
    const bool labeled = cfg.mode == Mode::Prediction || (i / slices == 0 || i / slices == columns - 1);
    s.targets.push_back(labeled ? detail::random_map(rng, cfg.input_size, cfg.input_size, cfg.output_channels, 0.0, 1.0)
                                : FeatureMap());
  }
  return s;
}

/// Smallest |pre-activation| over every ReLU layer of a forward pass.
inline double relu_margin(const TrainingSample& sample, const NetworkParams& p, const NetworkConfig& cfg) {
  const GridResult fwd = grid_forward(sample.input, p, cfg, /*keep_cache=*/true);
  double margin = std::numeric_limits<double>::infinity();
  for (const UnitCache& c : fwd.caches) {
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
      const FeatureMap z = conv2d(c.encoder.activations[l], p.encoder[l]);
      for (double v : z.values()) margin = std::min(margin, std::abs(v));
    }
    for (std::size_t l = 0; l + 1 < p.decoder.size(); ++l) {
      const FeatureMap z = deconv2d(c.decoder.activations[l], p.decoder[l]);
      for (double v : z.values()) margin = std::min(margin, std::abs(v));
    }
  }
  return margin;
}

/// Full-network check: every parameter array of a tiny network against
/// central differences of the grid loss.
///
/// A probe of +-step that straddles a ReLU kink measures a one-sided slope,
/// so instances are redrawn until every ReLU pre-activation sits at least
/// `kink_margin` away from zero. Targets sit within +-0.05 of the forward
/// outputs: a small residual keeps the loss, and with it the rounding noise
/// of the differences, small relative to the gradient.
inline std::vector<GradCheckResult> gradcheck_network(const NetworkConfig& cfg, int slices, int columns,
                                                      std::uint64_t seed, double step = 1e-5,
                                                      double kink_margin = 1e-3) {
  Rng rng(seed);
  NetworkParams p;
  TrainingSample sample;
  for (int attempt = 0;; ++attempt) {
    detail::require(attempt < 1000, "gradcheck_network: no kink-free instance found");
    p = NetworkParams::zeros(cfg);
    p.for_each_kernel([&](const std::string&, ConvKernel& k) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(k.kh * k.kw * k.in_channels));
      for (double& w : k.weights) w = rng.uniform(-bound, bound);
      for (double& b : k.bias) b = rng.uniform(0.2, 0.5);
    });
    sample = random_sample(cfg, slices, columns, rng);
    if (relu_margin(sample, p, cfg) >= kink_margin) break;
  }
  const GridResult fwd = grid_forward(sample.input, p, cfg);
  for (std::size_t u = 0; u < sample.targets.size(); ++u) {
    if (sample.targets[u].empty()) continue;
    sample.targets[u] = fwd.outputs[u];
    for (std::size_t i = 0; i < sample.targets[u].size(); ++i) sample.targets[u][i] += rng.uniform(-0.05, 0.05);
  }
  const NetworkParams grads = sample_loss_and_grad(sample, p, cfg).grads;
  std::vector<const std::vector<double>*> g;
  grads.for_each_array([&](const std::string&, const std::vector<double>& a) { g.push_back(&a); });

  std::vector<GradCheckResult> out;
  std::size_t idx = 0;
  auto loss = [&] { return sample_loss(sample, p, cfg); };
  p.for_each_array([&](const std::string& name, std::vector<double>& a) {
    const std::vector<double>& ga = *g[idx++];
    out.push_back({"network[" + to_string(cfg.mode) + "] " + name, check_gradient(a, ga, loss, step), a.size()});
  });
  return out;
}

/// Primitives, both cells and the tiny S=2/T=2 prediction network.
inline std::vector<GradCheckResult> gradcheck_all(std::uint64_t seed, double step = 1e-5) {
  std::vector<GradCheckResult> out = gradcheck_primitives(seed, step);
  for (auto& r : gradcheck_cells(seed + 1, step)) out.push_back(std::move(r));
  for (auto& r : gradcheck_network(tiny_prediction_config(), 2, 2, seed + 2, step)) out.push_back(std::move(r));
  return out;
}

inline double worst_error(const std::vector<GradCheckResult>& rs) {
  double w = 0.0;
  for (const auto& r : rs) w = std::max(w, r.max_relative_error);
  return w;
}

}  // namespace stcl
