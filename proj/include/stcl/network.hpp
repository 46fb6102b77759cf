#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stcl/cells.hpp"
#include "stcl/conv.hpp"
#include "stcl/error.hpp"
#include "stcl/feature_map.hpp"
#include "stcl/random.hpp"

namespace stcl {

enum class Mode { Prediction, Segmentation };

inline std::string to_string(Mode m) { return m == Mode::Prediction ? "predict" : "segment"; }
inline Mode mode_from_string(const std::string& s) {
  if (s == "predict" || s == "prediction") return Mode::Prediction;
  if (s == "segment" || s == "segmentation") return Mode::Segmentation;
  throw ConfigError("unknown mode '" + s + "' (expected predict or segment)");
}

/// Layer plan of the encoder / ST-ConvLSTM / decoder network.
struct NetworkConfig {
  Mode mode = Mode::Prediction;
  int input_channels = 3;
  int output_channels = 3;
  int input_size = 32;
  std::vector<int> encoder_channels{16, 32, 16, 8};
  std::vector<int> encoder_strides{2, 1, 2, 1};
  int hidden_channels = 8;
  int factor_dim = 1;
  std::vector<int> decoder_channels{8, 16, 32, 3};
  std::vector<int> decoder_strides{1, 2, 1, 2};
  /// Time intervals enter the network as days / interval_scale_days.
  double interval_scale_days = 365.0;
  /// Encoder and decoder kernels start uniform in ±init_gain*sqrt(1/fan_in).
  double init_gain = std::sqrt(6.0);

  /// ICVF-CT-Mask future-frame prediction: 32x32x3 -> 8x8x8 bottleneck.
  static NetworkConfig prediction() { return {}; }

  /// 1-8-16-32-64 / 64 / 64-32-16-1 segmentation network on 96x96 frames.
  static NetworkConfig segmentation() {
    NetworkConfig c;
    c.mode = Mode::Segmentation;
    c.input_channels = 1;
    c.output_channels = 1;
    c.input_size = 96;
    c.encoder_channels = {8, 16, 32, 64};
    c.encoder_strides = {2, 2, 2, 1};
    c.hidden_channels = 64;
    c.factor_dim = 0;
    c.decoder_channels = {64, 32, 16, 1};
    c.decoder_strides = {1, 2, 2, 2};
    return c;
  }

  /// Decoder plan mirroring the encoder: reversed encoder channels with the
  /// last replaced by the output channel count, reversed strides.
  void mirror_decoder() {
    decoder_channels.assign(encoder_channels.rbegin(), encoder_channels.rend());
    decoder_channels.back() = output_channels;
    decoder_strides.assign(encoder_strides.rbegin(), encoder_strides.rend());
  }

  int downsampling() const {
    return std::accumulate(encoder_strides.begin(), encoder_strides.end(), 1, std::multiplies<>());
  }
  int bottleneck_size() const { return input_size / downsampling(); }
  int cell_input_channels() const { return encoder_channels.back() + factor_dim; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("network config: " + m); };
    if (encoder_channels.empty() || encoder_channels.size() != encoder_strides.size())
      fail("encoder channels/strides must be non-empty and equally long");
    if (decoder_channels.size() != decoder_strides.size() || decoder_channels.empty())
      fail("decoder channels/strides must be non-empty and equally long");
    if (mode == Mode::Prediction && (encoder_channels.size() != 4 || decoder_channels.size() != 4))
      fail("prediction mode uses exactly 4 encoder and 4 decoder layers");
    for (int s : encoder_strides)
      if (s != 1 && s != 2) fail("strides must be 1 or 2");
    for (int s : decoder_strides)
      if (s != 1 && s != 2) fail("strides must be 1 or 2");
    const int down = downsampling();
    const int up = std::accumulate(decoder_strides.begin(), decoder_strides.end(), 1, std::multiplies<>());
    if (down != up) fail("decoder upsampling must undo encoder downsampling");
    if (input_size <= 0 || input_size % down != 0) fail("input size must be divisible by total stride");
    if (input_channels <= 0 || output_channels <= 0 || hidden_channels <= 0) fail("channel counts must be positive");
    for (int c : encoder_channels)
      if (c <= 0) fail("encoder channel counts must be positive");
    for (int c : decoder_channels)
      if (c <= 0) fail("decoder channel counts must be positive");
    if (decoder_channels.back() != output_channels) fail("last decoder layer must emit output_channels");
    if (factor_dim < 0) fail("factor_dim must be >= 0");
    if (mode == Mode::Prediction && factor_dim < 1) fail("prediction mode needs factor_dim >= 1");
    if (!(interval_scale_days > 0)) fail("interval_scale_days must be positive");
    if (!(init_gain > 0)) fail("init_gain must be positive");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"mode", to_string(c.mode)},
                     {"input_channels", c.input_channels},
                     {"output_channels", c.output_channels},
                     {"input_size", c.input_size},
                     {"encoder_channels", c.encoder_channels},
                     {"encoder_strides", c.encoder_strides},
                     {"hidden_channels", c.hidden_channels},
                     {"factor_dim", c.factor_dim},
                     {"decoder_channels", c.decoder_channels},
                     {"decoder_strides", c.decoder_strides},
                     {"interval_scale_days", c.interval_scale_days},
                     {"init_gain", c.init_gain}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  c = mode_from_string(j.value("mode", std::string("predict"))) == Mode::Prediction ? NetworkConfig::prediction()
                                                                                  : NetworkConfig::segmentation();
  c.input_channels = j.value("input_channels", c.input_channels);
  c.output_channels = j.value("output_channels", c.output_channels);
  c.input_size = j.value("input_size", c.input_size);
  c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
  c.encoder_strides = j.value("encoder_strides", c.encoder_strides);
  c.hidden_channels = j.value("hidden_channels", c.hidden_channels);
  c.factor_dim = j.value("factor_dim", c.factor_dim);
  c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
  c.decoder_strides = j.value("decoder_strides", c.decoder_strides);
  c.interval_scale_days = j.value("interval_scale_days", c.interval_scale_days);
  c.init_gain = j.value("init_gain", c.init_gain);
}

// ---------------------------------------------------------------------------
// Parameters

/// Every learnable array of the network. The same type holds gradients and
/// ADAM moments, so all of them share one traversal order.
struct NetworkParams {
  std::vector<ConvKernel> encoder;
  StConvLstmParams cell;
  std::vector<ConvKernel> decoder;

  static NetworkParams zeros(const NetworkConfig& cfg) {
    cfg.validate();
    NetworkParams p;
    int in = cfg.input_channels;
    for (std::size_t l = 0; l < cfg.encoder_channels.size(); ++l) {
      p.encoder.emplace_back(3, 3, in, cfg.encoder_channels[l], cfg.encoder_strides[l], true);
      in = cfg.encoder_channels[l];
    }
    p.cell = StConvLstmParams::zeros(cfg.cell_input_channels(), cfg.hidden_channels);
    in = cfg.hidden_channels;
    for (std::size_t l = 0; l < cfg.decoder_channels.size(); ++l) {
      p.decoder.emplace_back(3, 3, in, cfg.decoder_channels[l], cfg.decoder_strides[l], true);
      in = cfg.decoder_channels[l];
    }
    return p;
  }

  /// Kernels uniform in ±g*sqrt(1/fan_in) with fan_in = kh*kw*in_channels,
  /// g = cfg.init_gain for encoder/decoder and 1 for the cell; biases zero
  /// except both forget gates, which start at +1.
  static NetworkParams initialize(const NetworkConfig& cfg, std::uint64_t seed) {
    NetworkParams p = zeros(cfg);
    Rng rng(seed);
    p.for_each_kernel([&](const std::string& name, ConvKernel& k) {
      const double gain = name.rfind("cell", 0) == 0 ? 1.0 : cfg.init_gain;
      const double bound = gain * std::sqrt(1.0 / (k.kh * k.kw * k.in_channels));
      for (double& w : k.weights) w = rng.uniform(-bound, bound);
    });
    const int F = cfg.hidden_channels;
    for (int g : {StConvLstmParams::kForgetSpatial, StConvLstmParams::kForgetTemporal})
      for (int k = 0; k < F; ++k) p.cell.input.bias[g * F + k] = 1.0;
    return p;
  }

  template <class F>
  void for_each_kernel(F&& f) {
    for (std::size_t l = 0; l < encoder.size(); ++l) f("encoder." + std::to_string(l), encoder[l]);
    cell.for_each_kernel([&](const std::string& n, ConvKernel& k) { f("cell." + n, k); });
    for (std::size_t l = 0; l < decoder.size(); ++l) f("decoder." + std::to_string(l), decoder[l]);
  }
  template <class F>
  void for_each_kernel(F&& f) const {
    for (std::size_t l = 0; l < encoder.size(); ++l) f("encoder." + std::to_string(l), encoder[l]);
    cell.for_each_kernel([&](const std::string& n, const ConvKernel& k) { f("cell." + n, k); });
    for (std::size_t l = 0; l < decoder.size(); ++l) f("decoder." + std::to_string(l), decoder[l]);
  }

  /// Visits every weight and bias array as (name, std::vector<double>&).
  template <class F>
  void for_each_array(F&& f) {
    for_each_kernel([&](const std::string& n, ConvKernel& k) {
      f(n + ".weights", k.weights);
      if (k.has_bias()) f(n + ".bias", k.bias);
    });
  }
  template <class F>
  void for_each_array(F&& f) const {
    for_each_kernel([&](const std::string& n, const ConvKernel& k) {
      f(n + ".weights", k.weights);
      if (k.has_bias()) f(n + ".bias", k.bias);
    });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_array([&](const std::string&, const std::vector<double>& a) { n += a.size(); });
    return n;
  }

  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    z.for_each_array([](const std::string&, std::vector<double>& a) { std::fill(a.begin(), a.end(), 0.0); });
    return z;
  }

  void add(const NetworkParams& o) {
    std::vector<const std::vector<double>*> src;
    o.for_each_array([&](const std::string&, const std::vector<double>& a) { src.push_back(&a); });
    std::size_t idx = 0;
    for_each_array([&](const std::string&, std::vector<double>& a) {
      const auto& b = *src.at(idx++);
      detail::require(a.size() == b.size(), "NetworkParams::add: shape mismatch");
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    });
  }

  void scale(double k) {
    for_each_array([k](const std::string&, std::vector<double>& a) {
      for (double& v : a) v *= k;
    });
  }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

// ---------------------------------------------------------------------------
// Encoder / factor tiling / decoder

struct EncoderCache {
  std::vector<FeatureMap> activations;  // [0] = input, [l+1] = relu(conv_l(...))
};

inline EncoderCache encode_cached(const FeatureMap& frame, const NetworkParams& p, const NetworkConfig& cfg) {
  if (frame.rows() != cfg.input_size || frame.cols() != cfg.input_size || frame.channels() != cfg.input_channels)
    throw ConfigError("encode: frame " + frame.shape() + " does not match configured input " +
                      FeatureMap::shape_string(cfg.input_size, cfg.input_size, cfg.input_channels));
  EncoderCache c;
  c.activations.reserve(p.encoder.size() + 1);
  c.activations.push_back(frame);
  for (const ConvKernel& k : p.encoder) c.activations.push_back(relu(conv2d(c.activations.back(), k)));
  return c;
}

/// Four strided conv + ReLU layers down to the bottleneck feature map.
inline FeatureMap encode(const FeatureMap& frame, const NetworkParams& p, const NetworkConfig& cfg) {
  return encode_cached(frame, p, cfg).activations.back();
}

inline FeatureMap encode_backward(const EncoderCache& c, const NetworkParams& p, const FeatureMap& grad_out,
                                  NetworkParams& grads) {
  detail::require(c.activations.size() == p.encoder.size() + 1, "encode_backward: forward cache missing");
  FeatureMap g = grad_out;
  for (std::size_t l = p.encoder.size(); l-- > 0;) {
    g = relu_backward(c.activations[l + 1], g);
    ConvGrad cg = conv2d_backward(c.activations[l], p.encoder[l], g);
    accumulate_kernel(grads.encoder[l], cg);
    g = std::move(cg.input);
  }
  return g;
}

/// Days between two scans mapped to the network's factor scale.
inline double normalize_interval(double days, double scale_days = 365.0) { return days / scale_days; }

/// Broadcasts a scalar clinical factor into an m-channel constant map.
inline FeatureMap tile_factor(double value, int rows, int cols, int m) {
  if (m <= 0) throw ConfigError("tile_factor: factor dimension must be >= 1");
  return FeatureMap(rows, cols, m, value);
}

struct DecoderCache {
  std::vector<FeatureMap> activations;  // [0] = hidden state, last = sigmoid output
};

inline DecoderCache decode_cached(const FeatureMap& hidden, const NetworkParams& p) {
  DecoderCache c;
  c.activations.reserve(p.decoder.size() + 1);
  c.activations.push_back(hidden);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    FeatureMap z = deconv2d(c.activations.back(), p.decoder[l]);
    c.activations.push_back(l + 1 == p.decoder.size() ? sigmoid(z) : relu(z));
  }
  return c;
}

/// Transposed-conv decoder: ReLU on hidden layers, sigmoid head in (0, 1).
inline FeatureMap decode(const FeatureMap& hidden, const NetworkParams& p) {
  return decode_cached(hidden, p).activations.back();
}

inline FeatureMap decode_backward(const DecoderCache& c, const NetworkParams& p, const FeatureMap& grad_out,
                                  NetworkParams& grads) {
  detail::require(c.activations.size() == p.decoder.size() + 1, "decode_backward: forward cache missing");
  FeatureMap g = grad_out;
  for (std::size_t l = p.decoder.size(); l-- > 0;) {
    g = (l + 1 == p.decoder.size()) ? sigmoid_backward(c.activations[l + 1], g)
                                    : relu_backward(c.activations[l + 1], g);
    ConvGrad cg = deconv2d_backward(c.activations[l], p.decoder[l], g);
    accumulate_kernel(grads.decoder[l], cg);
    g = std::move(cg.input);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Spatio-temporal unrolling grid

/// Frames of one sub-sequence, indexed (slice s, time t) from zero, plus the
/// day intervals between consecutive time points. Frame values live in
/// [0, 1] (the stored [0, 255] range divided by 255).
struct SpatioTemporalSequence {
  int slices = 0;
  int times = 0;
  std::vector<FeatureMap> frames;  // index t * slices + s
  std::vector<double> intervals;   // intervals[t]: days from time t to t+1

  SpatioTemporalSequence() = default;
  SpatioTemporalSequence(int s, int t) : slices(s), times(t), frames(static_cast<std::size_t>(s) * t) {}

  FeatureMap& frame(int s, int t) { return frames.at(static_cast<std::size_t>(t) * slices + s); }
  const FeatureMap& frame(int s, int t) const { return frames.at(static_cast<std::size_t>(t) * slices + s); }

  void validate() const {
    detail::require(slices > 0 && times > 0, "sequence must have at least one slice and one time point");
    detail::require(frames.size() == static_cast<std::size_t>(slices) * times, "sequence frame count mismatch");
    for (const auto& f : frames)
      detail::require(f.same_shape(frames.front()), "all frames of a sequence must share their shape");
  }
};

/// One grid unit (s, t), zero-based.
struct GridUnit {
  int slice;
  int time;
  friend bool operator==(const GridUnit&, const GridUnit&) = default;
};

/// Input to one unrolled grid: `columns` time columns of `slices` frames and
/// one factor value (days) per column. Segmentation grids carry no factors.
struct GridInput {
  int slices = 0;
  int columns = 0;
  std::vector<FeatureMap> frames;      // index t * slices + s
  std::vector<double> factor_days;     // per column; empty when factor_dim == 0

  const FeatureMap& frame(int s, int t) const { return frames.at(static_cast<std::size_t>(t) * slices + s); }
  std::size_t unit_index(int s, int t) const { return static_cast<std::size_t>(t) * slices + s; }
};

/// Prediction grid: column t sees frame t and the interval t -> t+1.
inline GridInput prediction_input(const SpatioTemporalSequence& seq, int columns) {
  seq.validate();
  detail::require(columns >= 1 && columns <= seq.times, "prediction_input: bad column count");
  detail::require(static_cast<int>(seq.intervals.size()) >= columns,
                  "prediction_input: missing interval for column " + std::to_string(seq.intervals.size()));
  GridInput in;
  in.slices = seq.slices;
  in.columns = columns;
  for (int t = 0; t < columns; ++t)
    for (int s = 0; s < seq.slices; ++s) in.frames.push_back(seq.frame(s, t));
  in.factor_days.assign(seq.intervals.begin(), seq.intervals.begin() + columns);
  return in;
}

inline GridInput segmentation_input(const SpatioTemporalSequence& seq) {
  seq.validate();
  GridInput in;
  in.slices = seq.slices;
  in.columns = seq.times;
  in.frames = seq.frames;
  return in;
}

/// Units whose outputs feed unit (s, t): the temporal predecessor (s, t-1)
/// and the spatial predecessor (s-1, t). The first slice of column t > 0
/// takes the last slice of column t-1 as its spatial predecessor.
struct Predecessors {
  std::optional<GridUnit> spatial;
  std::optional<GridUnit> temporal;
};

inline Predecessors predecessors(GridUnit u, int slices) {
  Predecessors p;
  if (u.time > 0) p.temporal = GridUnit{u.slice, u.time - 1};
  if (u.slice > 0)
    p.spatial = GridUnit{u.slice - 1, u.time};
  else if (u.time > 0)
    p.spatial = GridUnit{slices - 1, u.time - 1};
  return p;
}

/// Time-major, slice-ascending visiting order.
inline std::vector<GridUnit> time_major_order(int slices, int columns) {
  std::vector<GridUnit> order;
  for (int t = 0; t < columns; ++t)
    for (int s = 0; s < slices; ++s) order.push_back({s, t});
  return order;
}

/// Kahn's algorithm over the grid DAG, releasing ready units in
/// descending-slice order (a different tie-break from time_major_order).
inline std::vector<GridUnit> kahn_order(int slices, int columns) {
  const int n = slices * columns;
  std::vector<int> indegree(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<int>> succ(static_cast<std::size_t>(n));
  for (int t = 0; t < columns; ++t)
    for (int s = 0; s < slices; ++s) {
      const int id = t * slices + s;
      const Predecessors p = predecessors({s, t}, slices);
      for (const auto& q : {p.spatial, p.temporal}) {
        if (!q) continue;
        succ[static_cast<std::size_t>(q->time * slices + q->slice)].push_back(id);
        ++indegree[static_cast<std::size_t>(id)];
      }
    }
  std::vector<int> ready;
  for (int i = n; i-- > 0;)
    if (indegree[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
  std::vector<GridUnit> order;
  while (!ready.empty()) {
    std::sort(ready.begin(), ready.end(), [&](int a, int b) { return a % slices > b % slices || (a % slices == b % slices && a > b); });
    const int id = ready.back();
    ready.pop_back();
    order.push_back({id % slices, id / slices});
    for (int v : succ[static_cast<std::size_t>(id)])
      if (--indegree[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
  }
  return order;
}

/// Throws ContractError unless `order` visits every unit exactly once and
/// after both of its predecessors.
inline void check_topological(const std::vector<GridUnit>& order, int slices, int columns) {
  std::vector<int> position(static_cast<std::size_t>(slices) * columns, -1);
  detail::require(order.size() == position.size(), "grid order must visit every unit exactly once");
  for (std::size_t i = 0; i < order.size(); ++i) {
    const GridUnit u = order[i];
    detail::require(u.slice >= 0 && u.slice < slices && u.time >= 0 && u.time < columns, "grid order: unit out of range");
    auto& pos = position[static_cast<std::size_t>(u.time) * slices + u.slice];
    detail::require(pos < 0, "grid order visits a unit twice");
    pos = static_cast<int>(i);
  }
  for (const GridUnit u : order) {
    const int here = position[static_cast<std::size_t>(u.time) * slices + u.slice];
    const Predecessors p = predecessors(u, slices);
    for (const auto& q : {p.spatial, p.temporal})
      if (q)
        detail::require(position[static_cast<std::size_t>(q->time) * slices + q->slice] < here,
                        "grid order is not topological");
  }
}

struct UnitCache {
  EncoderCache encoder;
  StCellCache cell;
  DecoderCache decoder;
};

/// Per-unit outputs (sigmoid probabilities) and, when requested, the
/// forward intermediates needed by grid_backward.
struct GridResult {
  int slices = 0;
  int columns = 0;
  std::vector<FeatureMap> outputs;  // index t * slices + s
  std::vector<CellState> states;
  std::vector<UnitCache> caches;  // empty unless keep_cache

  const FeatureMap& output(int s, int t) const { return outputs.at(static_cast<std::size_t>(t) * slices + s); }
};

inline void check_grid_input(const GridInput& in, const NetworkConfig& cfg) {
  detail::require(in.slices >= 1 && in.columns >= 1, "grid needs at least one slice and one column");
  detail::require(in.frames.size() == static_cast<std::size_t>(in.slices) * in.columns, "grid frame count mismatch");
  if (cfg.factor_dim > 0)
    detail::require(in.factor_days.size() == static_cast<std::size_t>(in.columns),
                    "grid input needs one interval per column");
}

/// Evaluates the unrolled grid. Units at t = 0 see a ZERO temporal state,
/// unit (0, 0) sees ZERO for both predecessors. Column t's decoder output
/// is the prediction of time t+1 (prediction mode) or the mask of time t
/// (segmentation mode).
inline GridResult grid_forward(const GridInput& in, const NetworkParams& p, const NetworkConfig& cfg,
                               bool keep_cache = false, const std::vector<GridUnit>* order = nullptr) {
  cfg.validate();
  check_grid_input(in, cfg);
  const std::vector<GridUnit> default_order = time_major_order(in.slices, in.columns);
  const std::vector<GridUnit>& visit = order ? *order : default_order;
  if (order) check_topological(visit, in.slices, in.columns);

  const int bn = cfg.bottleneck_size();
  const CellState zero = CellState::zero(bn, bn, cfg.hidden_channels);
  const std::size_t n = in.frames.size();
  GridResult r;
  r.slices = in.slices;
  r.columns = in.columns;
  r.outputs.resize(n);
  r.states.resize(n);
  if (keep_cache) r.caches.resize(n);

  for (const GridUnit u : visit) {
    const std::size_t id = in.unit_index(u.slice, u.time);
    EncoderCache enc = encode_cached(in.frame(u.slice, u.time), p, cfg);
    FeatureMap x = enc.activations.back();
    if (cfg.factor_dim > 0)
      x = concat_channels(x, tile_factor(normalize_interval(in.factor_days[static_cast<std::size_t>(u.time)],
                                                            cfg.interval_scale_days),
                                         bn, bn, cfg.factor_dim));
    const Predecessors pred = predecessors(u, in.slices);
    const CellState& sp = pred.spatial ? r.states[in.unit_index(pred.spatial->slice, pred.spatial->time)] : zero;
    const CellState& tp = pred.temporal ? r.states[in.unit_index(pred.temporal->slice, pred.temporal->time)] : zero;
    StCellCache cell = st_convlstm_forward(x, sp, tp, p.cell);
    DecoderCache dec = decode_cached(cell.out.hidden, p);
    r.outputs[id] = dec.activations.back();
    r.states[id] = cell.out;
    if (keep_cache) r.caches[id] = {std::move(enc), std::move(cell), std::move(dec)};
  }
  return r;
}

/// Reverse traversal of the grid DAG. `output_grads[u]` is dL/dY for unit
/// u (an empty map means the unit's output is not in the loss). Each
/// unit's state gradient collects its own output term plus the terms sent
/// back by its spatial and temporal successors; parameter gradients are
/// summed over all units. When `unit_cell_grads` is given it receives each
/// unit's own contribution to the cell parameter gradient.
inline NetworkParams grid_backward(const GridInput& in, const GridResult& fwd, const NetworkParams& p,
                                   const NetworkConfig& cfg, const std::vector<FeatureMap>& output_grads,
                                   std::vector<StConvLstmParams>* unit_cell_grads = nullptr) {
  check_grid_input(in, cfg);
  const std::size_t n = in.frames.size();
  detail::require(fwd.caches.size() == n, "grid_backward: forward cache missing (run grid_forward with keep_cache)");
  detail::require(output_grads.size() == n, "grid_backward: need one output gradient slot per unit");

  const int bn = cfg.bottleneck_size();
  const int F = cfg.hidden_channels;
  NetworkParams grads = p.zeros_like();
  std::vector<CellState> dstate(n, CellState::zero(bn, bn, F));
  const std::vector<GridUnit> order = time_major_order(in.slices, in.columns);
  if (unit_cell_grads) unit_cell_grads->assign(n, p.cell.zeros_like());

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t id = in.unit_index(it->slice, it->time);
    const UnitCache& c = fwd.caches[id];
    CellState& ds = dstate[id];
    if (!output_grads[id].empty()) accumulate(ds.hidden, decode_backward(c.decoder, p, output_grads[id], grads));
    StCellBackward cb = st_convlstm_backward(c.cell, p.cell, ds.cell, ds.hidden,
                                             unit_cell_grads ? (*unit_cell_grads)[id] : grads.cell);
    if (unit_cell_grads) {
      StConvLstmParams& local = (*unit_cell_grads)[id];
      auto add = [](ConvKernel& into, const ConvKernel& g) {
        for (std::size_t i = 0; i < g.weights.size(); ++i) into.weights[i] += g.weights[i];
        for (std::size_t i = 0; i < g.bias.size(); ++i) into.bias[i] += g.bias[i];
      };
      add(grads.cell.input, local.input);
      add(grads.cell.spatial, local.spatial);
      add(grads.cell.temporal, local.temporal);
    }

    const Predecessors pred = predecessors(*it, in.slices);
    if (pred.spatial) {
      CellState& d = dstate[in.unit_index(pred.spatial->slice, pred.spatial->time)];
      accumulate(d.cell, cb.spatial.cell);
      accumulate(d.hidden, cb.spatial.hidden);
    }
    if (pred.temporal) {
      CellState& d = dstate[in.unit_index(pred.temporal->slice, pred.temporal->time)];
      accumulate(d.cell, cb.temporal.cell);
      accumulate(d.hidden, cb.temporal.hidden);
    }
    FeatureMap gx = cfg.factor_dim > 0 ? slice_channels(cb.x, 0, cfg.encoder_channels.back()) : std::move(cb.x);
    encode_backward(c.encoder, p, gx, grads);
  }
  return grads;
}

}  // namespace stcl
