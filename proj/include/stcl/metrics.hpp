#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stcl/datagen.hpp"
#include "stcl/error.hpp"
#include "stcl/volume.hpp"

namespace stcl {

/// Voxel counts of a predicted and a ground-truth binary mask.
struct Overlap {
  std::size_t tpv = 0;
  std::size_t v_pred = 0;
  std::size_t v_gt = 0;
};

inline Overlap overlap(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  detail::require(pred.size() == gt.size(), "overlap: mask sizes differ");
  Overlap o;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    o.v_pred += p;
    o.v_gt += g;
    o.tpv += p && g;
  }
  return o;
}

inline double dice(const Overlap& o) {
  if (o.v_pred + o.v_gt == 0) throw MetricError("Dice undefined: both volumes are empty");
  return 2.0 * static_cast<double>(o.tpv) / static_cast<double>(o.v_pred + o.v_gt);
}
inline double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  return dice(overlap(pred, gt));
}

inline double rvd(const Overlap& o) {
  if (o.v_gt == 0) throw MetricError("RVD undefined: ground-truth volume is empty");
  const double d = static_cast<double>(o.v_pred) - static_cast<double>(o.v_gt);
  return std::abs(d) / static_cast<double>(o.v_gt);
}
inline double rvd(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) { return rvd(overlap(pred, gt)); }

struct IcvfRmse {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // TPV voxels with zero ground-truth ICVF
};

/// Root mean squared relative ICVF error over the true-positive voxels.
/// Voxels whose ground truth is zero cannot be normalized; they are left
/// out and counted.
inline IcvfRmse icvf_rmse(std::span<const double> pred, std::span<const double> gt,
                          std::span<const std::uint8_t> pred_mask, std::span<const std::uint8_t> gt_mask) {
  detail::require(pred.size() == gt.size() && pred.size() == pred_mask.size() && pred.size() == gt_mask.size(),
                  "icvf_rmse: input sizes differ");
  IcvfRmse r;
  double sum = 0.0;
  bool any_tp = false;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred_mask[i] || !gt_mask[i]) continue;
    any_tp = true;
    if (gt[i] == 0.0) {
      ++r.excluded;
      continue;
    }
    const double e = (pred[i] - gt[i]) / gt[i];
    sum += e * e;
    ++r.used;
  }
  if (!any_tp) throw MetricError("ICVF RMSE undefined: empty true-positive volume");
  if (r.used == 0) throw MetricError("ICVF RMSE undefined: every true-positive voxel has zero ground truth");
  r.value = std::sqrt(sum / static_cast<double>(r.used));
  return r;
}

/// |mean HU(pred) - mean HU(gt)| / |mean HU(gt)| over the true-positive
/// voxels. Inputs are stored [0, 255] CT values.
inline double diff_hu(std::span<const double> pred_ct, std::span<const double> gt_ct,
                      std::span<const std::uint8_t> pred_mask, std::span<const std::uint8_t> gt_mask) {
  detail::require(pred_ct.size() == gt_ct.size() && pred_ct.size() == pred_mask.size() &&
                      pred_ct.size() == gt_mask.size(),
                  "diff_hu: input sizes differ");
  double sp = 0.0, sg = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred_ct.size(); ++i) {
    if (!pred_mask[i] || !gt_mask[i]) continue;
    sp += stored_to_hu(pred_ct[i]);
    sg += stored_to_hu(gt_ct[i]);
    ++n;
  }
  if (n == 0) throw MetricError("diff.HU undefined: empty true-positive volume");
  const double mp = sp / static_cast<double>(n), mg = sg / static_cast<double>(n);
  if (mg == 0.0) throw MetricError("diff.HU undefined: mean ground-truth HU is zero");
  return std::abs(mp - mg) / std::abs(mg);
}

/// Per-volume prediction scores.
struct VolumeReport {
  double dice = 0.0;
  double rvd = 0.0;
  std::optional<double> icvf_rmse;
  std::size_t icvf_excluded = 0;
  std::optional<double> diff_hu;
  std::size_t tpv = 0;
  std::size_t v_pred = 0;
  std::size_t v_gt = 0;
};

namespace detail {
inline std::vector<double> channel_values(const Volume& v, int ch) {
  std::vector<double> out(static_cast<std::size_t>(v.depth) * v.rows * v.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v.data[i * v.channels + ch];
  return out;
}
}  // namespace detail

/// Scores a predicted ICVF-CT-Mask volume against the ground truth. ICVF
/// and diff.HU are absent when the TPV is empty.
inline VolumeReport evaluate_volume(const Volume& pred, const Volume& gt) {
  detail::require(pred.same_shape(gt) && gt.channels == 3, "evaluate_volume: need matching ICVF-CT-Mask volumes");
  const MaskVolume pm = mask_of(pred, kMask), gm = mask_of(gt, kMask);
  const Overlap o = overlap(pm.data, gm.data);
  VolumeReport r;
  r.tpv = o.tpv;
  r.v_pred = o.v_pred;
  r.v_gt = o.v_gt;
  r.dice = dice(o);
  r.rvd = rvd(o);
  if (o.tpv > 0) {
    const auto pi = detail::channel_values(pred, kIcvf), gi = detail::channel_values(gt, kIcvf);
    try {
      const IcvfRmse e = icvf_rmse(pi, gi, pm.data, gm.data);
      r.icvf_rmse = e.value;
      r.icvf_excluded = e.excluded;
    } catch (const MetricError&) {
    }
    const auto pc = detail::channel_values(pred, kCt), gc = detail::channel_values(gt, kCt);
    try {
      r.diff_hu = diff_hu(pc, gc, pm.data, gm.data);
    } catch (const MetricError&) {
    }
  }
  return r;
}

/// (V3 - V2) / V2 on voxel counts.
inline double growth_rate(std::size_t v_before, std::size_t v_after) {
  if (v_before == 0) throw MetricError("growth rate undefined: empty earlier volume");
  return (static_cast<double>(v_after) - static_cast<double>(v_before)) / static_cast<double>(v_before);
}

struct ProgressionScores {
  std::optional<double> sensitivity;  // over true progression (rate > 0)
  std::optional<double> specificity;  // over true regression (rate < 0)
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Progression (positive rate) vs regression (negative rate). A patient with
/// a true rate of exactly zero belongs to neither class.
inline ProgressionScores progression_scores(std::span<const double> predicted, std::span<const double> truth) {
  detail::require(predicted.size() == truth.size(), "progression_scores: size mismatch");
  ProgressionScores s;
  std::size_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] > 0) {
      ++s.positives;
      tp += predicted[i] > 0;
    } else if (truth[i] < 0) {
      ++s.negatives;
      tn += !(predicted[i] > 0);
    }
  }
  if (s.positives) s.sensitivity = static_cast<double>(tp) / static_cast<double>(s.positives);
  if (s.negatives) s.specificity = static_cast<double>(tn) / static_cast<double>(s.negatives);
  return s;
}

inline double pearson_r(std::span<const double> x, std::span<const double> y) {
  detail::require(x.size() == y.size(), "pearson_r: size mismatch");
  if (x.size() < 2) throw MetricError("pearson_r needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("pearson_r undefined: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Cohort summaries

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for n == 1
  double min = 0.0;
  double max = 0.0;
};

inline Summary summarize(std::span<const double> v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// "mean ± std [min, max]" in percent with one decimal, the layout of the
/// paper's result tables.
inline std::string format_summary(const Summary& s) {
  if (s.n == 0) return "n/a";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.1f ± %.1f [%.1f, %.1f]", 100 * s.mean, 100 * s.std, 100 * s.min, 100 * s.max);
  return buf;
}

inline nlohmann::json to_json(const Summary& s) {
  return {{"n", s.n}, {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}, {"text", format_summary(s)}};
}

inline nlohmann::json to_json(const VolumeReport& r) {
  nlohmann::json j = {{"dice", r.dice}, {"rvd", r.rvd},       {"tpv", r.tpv},
                      {"v_pred", r.v_pred}, {"v_gt", r.v_gt}, {"icvf_excluded", r.icvf_excluded}};
  j["icvf_rmse"] = r.icvf_rmse ? nlohmann::json(*r.icvf_rmse) : nlohmann::json(nullptr);
  j["diff_hu"] = r.diff_hu ? nlohmann::json(*r.diff_hu) : nlohmann::json(nullptr);
  return j;
}

}  // namespace stcl
