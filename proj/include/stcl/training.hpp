#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <thread>
#include <vector>

#include "stcl/error.hpp"
#include "stcl/network.hpp"
#include "stcl/random.hpp"

namespace stcl {

// ---------------------------------------------------------------------------
// Loss

/// Sum of squared differences over every (prediction, target) pair whose
/// target is non-empty.
inline double grid_loss_sum(const std::vector<FeatureMap>& predictions, const std::vector<FeatureMap>& targets) {
  detail::require(predictions.size() == targets.size(), "grid_loss: prediction/target count mismatch");
  double sum = 0.0;
  for (std::size_t u = 0; u < targets.size(); ++u) {
    if (targets[u].empty()) continue;
    detail::require_same_shape(predictions[u], targets[u], "grid_loss");
    for (std::size_t i = 0; i < targets[u].size(); ++i) {
      const double d = predictions[u][i] - targets[u][i];
      sum += d * d;
    }
  }
  return sum;
}

inline std::size_t loss_element_count(const std::vector<FeatureMap>& targets) {
  std::size_t n = 0;
  for (const auto& t : targets) n += t.size();
  return n;
}

/// ℓ2 grid loss normalized to a mean over every compared element (pixels,
/// channels, slices and time terms).
inline double grid_loss(const std::vector<FeatureMap>& predictions, const std::vector<FeatureMap>& targets) {
  const std::size_t n = loss_element_count(targets);
  detail::require(n > 0, "grid_loss: no labeled frames");
  return grid_loss_sum(predictions, targets) / static_cast<double>(n);
}

/// d grid_loss / d predictions; empty maps for units outside the loss.
inline std::vector<FeatureMap> grid_loss_grad(const std::vector<FeatureMap>& predictions,
                                              const std::vector<FeatureMap>& targets) {
  detail::require(predictions.size() == targets.size(), "grid_loss_grad: prediction/target count mismatch");
  const std::size_t n = loss_element_count(targets);
  detail::require(n > 0, "grid_loss_grad: no labeled frames");
  const double k = 2.0 / static_cast<double>(n);
  std::vector<FeatureMap> g(predictions.size());
  for (std::size_t u = 0; u < targets.size(); ++u) {
    if (targets[u].empty()) continue;
    g[u] = scale(subtract(predictions[u], targets[u]), k);
  }
  return g;
}

/// A grid input plus per-unit targets (empty where a unit has no label).
struct TrainingSample {
  GridInput input;
  std::vector<FeatureMap> targets;
};

/// Prediction-mode sample from a three-time-point sequence: columns 1 and 2
/// are inputs, unit (s, t) is compared against frame (s, t+1).
inline TrainingSample prediction_sample(const SpatioTemporalSequence& seq) {
  detail::require(seq.times >= 3, "prediction_sample: need three time points");
  TrainingSample out;
  out.input = prediction_input(seq, 2);
  for (int t = 0; t < 2; ++t)
    for (int s = 0; s < seq.slices; ++s) out.targets.push_back(seq.frame(s, t + 1));
  return out;
}

/// Segmentation sample: every frame is an input, only masks at the
/// labeled time points enter the loss.
inline TrainingSample segmentation_sample(const SpatioTemporalSequence& images, const SpatioTemporalSequence& masks,
                                          const std::vector<int>& labeled_times) {
  detail::require(images.slices == masks.slices && images.times == masks.times,
                  "segmentation_sample: image/mask grid mismatch");
  TrainingSample out;
  out.input = segmentation_input(images);
  out.targets.resize(images.frames.size());
  for (int t : labeled_times) {
    detail::require(t >= 0 && t < images.times, "segmentation_sample: labeled time out of range");
    for (int s = 0; s < images.slices; ++s) out.targets[out.input.unit_index(s, t)] = masks.frame(s, t);
  }
  return out;
}

inline double sample_loss(const TrainingSample& sample, const NetworkParams& p, const NetworkConfig& cfg) {
  return grid_loss(grid_forward(sample.input, p, cfg).outputs, sample.targets);
}

struct LossAndGrad {
  double loss = 0.0;
  NetworkParams grads;
};

inline LossAndGrad sample_loss_and_grad(const TrainingSample& sample, const NetworkParams& p,
                                        const NetworkConfig& cfg) {
  const GridResult fwd = grid_forward(sample.input, p, cfg, /*keep_cache=*/true);
  LossAndGrad r;
  r.loss = grid_loss(fwd.outputs, sample.targets);
  r.grads = grid_backward(sample.input, fwd, p, cfg, grid_loss_grad(fwd.outputs, sample.targets));
  return r;
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected ADAM update of a flat parameter array. `step` is the
/// 1-based index of this update.
inline void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                        std::int64_t step, const AdamConfig& c) {
  detail::require(w.size() == g.size() && w.size() == m.size() && w.size() == v.size(), "adam: shape mismatch");
  detail::require(step >= 1, "adam: step counter starts at 1");
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    w[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
  }
}

struct OptimizerState {
  AdamConfig config;
  NetworkParams first_moment;
  NetworkParams second_moment;
  std::int64_t step = 0;

  static OptimizerState for_params(const NetworkParams& p, AdamConfig c = {}) {
    return {c, p.zeros_like(), p.zeros_like(), 0};
  }
  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    return a.first_moment == b.first_moment && a.second_moment == b.second_moment && a.step == b.step &&
           a.config.learning_rate == b.config.learning_rate && a.config.beta1 == b.config.beta1 &&
           a.config.beta2 == b.config.beta2 && a.config.epsilon == b.config.epsilon;
  }
};

inline void adam_step(NetworkParams& params, const NetworkParams& grads, OptimizerState& opt) {
  std::vector<std::vector<double>*> w, m, v;
  std::vector<const std::vector<double>*> g;
  params.for_each_array([&](const std::string&, std::vector<double>& a) { w.push_back(&a); });
  grads.for_each_array([&](const std::string&, const std::vector<double>& a) { g.push_back(&a); });
  opt.first_moment.for_each_array([&](const std::string&, std::vector<double>& a) { m.push_back(&a); });
  opt.second_moment.for_each_array([&](const std::string&, std::vector<double>& a) { v.push_back(&a); });
  detail::require(w.size() == g.size() && w.size() == m.size() && w.size() == v.size(),
                  "adam_step: parameter groups do not match");
  ++opt.step;
  for (std::size_t i = 0; i < w.size(); ++i) adam_update(*w[i], *g[i], *m[i], *v[i], opt.step, opt.config);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  int epochs = 5;
  int batch_size = 16;
  int slices = 5;
  std::uint64_t seed = 1;
  double learning_rate = 1e-3;
  /// Upper bound on samples drawn per epoch from the shuffled pool; 0 uses
  /// the whole pool.
  std::size_t samples_per_epoch = 0;
  /// Worker threads for per-sample forward/backward within a batch.
  int threads = 1;

  static TrainConfig prediction() { return {}; }
  static TrainConfig segmentation() {
    TrainConfig c;
    c.epochs = 30;
    c.batch_size = 1;
    c.slices = 10;
    return c;
  }
  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (slices < 1) throw ConfigError("S must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(learning_rate >= 0)) throw ConfigError("learning rate must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"slices", c.slices},
       {"seed", c.seed},
       {"learning_rate", c.learning_rate},
       {"samples_per_epoch", c.samples_per_epoch},
       {"threads", c.threads}};
}

/// Missing keys keep their current values.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.slices = j.value("slices", c.slices);
  c.seed = j.value("seed", c.seed);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.samples_per_epoch = j.value("samples_per_epoch", c.samples_per_epoch);
  c.threads = j.value("threads", c.threads);
}

struct TrainResult {
  NetworkParams params;
  OptimizerState optimizer;
  std::vector<double> epoch_loss;  // mean sample loss per epoch
};

/// Produces training sample i of a pool of `count` samples.
using SampleFn = std::function<TrainingSample(std::size_t)>;
using EpochCallback = std::function<void(int epoch, double mean_loss, const NetworkParams&, const OptimizerState&)>;

/// Mini-batch ADAM over a seeded shuffle of the sample pool. Batch
/// gradients are the mean of per-sample gradients, summed in sample order
/// regardless of how many threads computed them.
inline TrainResult train(const SampleFn& sample, std::size_t count, const NetworkConfig& cfg, const TrainConfig& tc,
                         NetworkParams initial, const EpochCallback& on_epoch = {}) {
  tc.validate();
  cfg.validate();
  if (count == 0) throw ConfigError("train: empty dataset");
  TrainResult r{std::move(initial), {}, {}};
  AdamConfig ac;
  ac.learning_rate = tc.learning_rate;
  r.optimizer = OptimizerState::for_params(r.params, ac);
  Rng rng(tc.seed ^ 0x5EED5EEDULL);

  std::vector<std::size_t> pool(count);
  for (std::size_t i = 0; i < count; ++i) pool[i] = i;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(pool);
    const std::size_t n =
        tc.samples_per_epoch > 0 ? std::min<std::size_t>(tc.samples_per_epoch, pool.size()) : pool.size();
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(tc.batch_size));
      std::vector<LossAndGrad> items(b1 - b0);
      auto work = [&](std::size_t k) { items[k] = sample_loss_and_grad(sample(pool[b0 + k]), r.params, cfg); };
      const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(tc.threads), items.size());
      if (nthreads <= 1) {
        for (std::size_t k = 0; k < items.size(); ++k) work(k);
      } else {
        std::vector<std::thread> pool_threads;
        for (std::size_t w = 0; w < nthreads; ++w)
          pool_threads.emplace_back([&, w] {
            for (std::size_t k = w; k < items.size(); k += nthreads) work(k);
          });
        for (auto& th : pool_threads) th.join();
      }
      NetworkParams grads = std::move(items[0].grads);
      loss_sum += items[0].loss;
      for (std::size_t k = 1; k < items.size(); ++k) {
        grads.add(items[k].grads);
        loss_sum += items[k].loss;
      }
      grads.scale(1.0 / static_cast<double>(items.size()));
      adam_step(r.params, grads, r.optimizer);
    }
    r.epoch_loss.push_back(loss_sum / static_cast<double>(n));
    if (on_epoch) on_epoch(epoch + 1, r.epoch_loss.back(), r.params, r.optimizer);
  }
  return r;
}

}  // namespace stcl
