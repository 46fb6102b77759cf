#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "stcl/network.hpp"
#include "stcl/volume.hpp"

namespace stcl {

/// Keeps only the largest 4-connected foreground component of a rows x cols
/// binary image. Ties go to the component met first in raster order.
inline std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& mask, int rows, int cols) {
  detail::require(mask.size() == static_cast<std::size_t>(rows) * cols, "largest_component: size mismatch");
  std::vector<int> label(mask.size(), -1);
  int best_label = -1;
  std::size_t best_size = 0;
  int next = 0;
  std::deque<int> queue;
  for (int start = 0; start < rows * cols; ++start) {
    if (!mask[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0) continue;
    std::size_t size = 0;
    label[static_cast<std::size_t>(start)] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      ++size;
      const int r = p / cols, c = p % cols;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& q : nbr) {
        if (q[0] < 0 || q[0] >= rows || q[1] < 0 || q[1] >= cols) continue;
        const auto qi = static_cast<std::size_t>(q[0] * cols + q[1]);
        if (mask[qi] && label[qi] < 0) {
          label[qi] = next;
          queue.push_back(static_cast<int>(qi));
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
    ++next;
  }
  std::vector<std::uint8_t> out(mask.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = (best_label >= 0 && label[i] == best_label) ? 1 : 0;
  return out;
}

/// Predicted ICVF-CT-Mask frames in storage scale [0, 255], one per slice.
/// The mask channel is binarized at 128.
struct FuturePrediction {
  std::vector<FeatureMap> time2;
  std::vector<FeatureMap> time3;
};

inline FeatureMap to_storage_scale(const FeatureMap& probs, int mask_channel) {
  FeatureMap out = scale(probs, 255.0);
  if (mask_channel >= 0) {
    const std::size_t pixels = static_cast<std::size_t>(out.rows()) * out.cols();
    for (std::size_t p = 0; p < pixels; ++p) {
      double& v = out[p * out.channels() + mask_channel];
      v = binarize(v);
    }
  }
  return out;
}

/// Runs the two-column prediction grid on time points 1 and 2. `seq`
/// needs frames at two time points and the intervals (t1 -> t2) and
/// (t2 -> t3); substituting a longer second interval predicts further out.
inline FuturePrediction predict_future(const SpatioTemporalSequence& seq, const NetworkParams& p,
                                       const NetworkConfig& cfg) {
  if (cfg.mode != Mode::Prediction) throw ConfigError("predict_future needs a prediction-mode network");
  detail::require(seq.times >= 2, "predict_future: need frames at two time points");
  detail::require(seq.intervals.size() >= 2, "predict_future: need intervals (t1->t2) and (t2->t3)");
  const GridResult r = grid_forward(prediction_input(seq, 2), p, cfg);
  FuturePrediction out;
  for (int s = 0; s < seq.slices; ++s) {
    out.time2.push_back(to_storage_scale(r.output(s, 0), kMask));
    out.time3.push_back(to_storage_scale(r.output(s, 1), kMask));
  }
  return out;
}

/// Per-frame segmentation: probability > 0.5 is foreground, then only the
/// largest 4-connected component of each slice is kept. Returns masks in
/// {0, 255}, index t * slices + s.
inline std::vector<FeatureMap> segment(const SpatioTemporalSequence& seq, const NetworkParams& p,
                                       const NetworkConfig& cfg) {
  if (cfg.mode != Mode::Segmentation) throw ConfigError("segment needs a segmentation-mode network");
  seq.validate();
  if (seq.frames.front().channels() != cfg.input_channels)
    throw ConfigError("segment: frames have " + std::to_string(seq.frames.front().channels()) +
                      " channels, network expects " + std::to_string(cfg.input_channels));
  const GridResult r = grid_forward(segmentation_input(seq), p, cfg);
  std::vector<FeatureMap> masks;
  masks.reserve(r.outputs.size());
  for (const FeatureMap& prob : r.outputs) {
    std::vector<std::uint8_t> fg(static_cast<std::size_t>(prob.rows()) * prob.cols());
    for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = prob[i * prob.channels()] > 0.5 ? 1 : 0;
    fg = largest_component(fg, prob.rows(), prob.cols());
    FeatureMap m(prob.rows(), prob.cols(), 1);
    for (std::size_t i = 0; i < fg.size(); ++i) m[i] = fg[i] ? 255.0 : 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace stcl
