#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stcl/baseline.hpp"
#include "stcl/datagen.hpp"
#include "stcl/inference.hpp"
#include "stcl/metrics.hpp"
#include "stcl/training.hpp"

namespace stcl {

// ---------------------------------------------------------------------------
// Prediction training pool

/// Lazily materialized training sub-sequences: every (record, augmentation,
/// time triple, window) combination. Only the window extents are computed
/// up front; a sample is built from its augmented record on request.
class PredictionPool {
 public:
  struct Entry {
    std::uint32_t record;
    std::uint16_t augmentation;
    std::uint16_t first_time;
    std::int32_t start;
  };

  PredictionPool(const std::vector<DatasetRecord>& records, int S, std::uint64_t seed, bool augment_data = true,
                 std::vector<std::string>* warnings = nullptr)
      : records_(records), S_(S) {
    for (std::size_t r = 0; r < records.size(); ++r) {
      const DatasetRecord& rec = records[r];
      const std::vector<AugmentSpec> specs =
          augment_data ? augmentation_grid(seed ^ (rec.seed * 0x9E3779B97F4A7C15ULL)) : std::vector<AugmentSpec>{{}};
      specs_.push_back(specs);
      bool any = false;
      for (std::size_t a = 0; a < specs.size(); ++a) {
        const DatasetRecord aug = augment(rec, specs[a]);
        for (int t0 = 0; t0 + 2 < aug.times(); ++t0) {
          const auto ext = record_extent(aug, {t0, t0 + 1, t0 + 2});
          if (!ext) continue;
          for (int s : window_starts(ext->first, ext->second, S, /*overlap=*/true)) {
            entries_.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint16_t>(a),
                                static_cast<std::uint16_t>(t0), s});
            any = true;
          }
        }
      }
      if (!any && warnings)
        warnings->push_back("patient " + std::to_string(rec.id) + " skipped: fewer than " + std::to_string(S) +
                            " tumour slices");
    }
  }

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }

  TrainingSample sample(std::size_t i) const {
    const Entry& e = entries_.at(i);
    const DatasetRecord& rec = records_[e.record];
    DatasetRecord sub;
    sub.intervals = rec.intervals;
    const AugmentSpec& spec = specs_[e.record][e.augmentation];
    sub.volumes.resize(rec.volumes.size());
    for (int t = e.first_time; t < e.first_time + 3; ++t)
      sub.volumes[static_cast<std::size_t>(t)] = augment(rec.volumes[static_cast<std::size_t>(t)], spec);
    return prediction_sample(make_sequence(sub, e.start, S_, {e.first_time, e.first_time + 1, e.first_time + 2}));
  }

  SampleFn sampler() const {
    return [this](std::size_t i) { return sample(i); };
  }

 private:
  const std::vector<DatasetRecord>& records_;
  int S_;
  std::vector<std::vector<AugmentSpec>> specs_;
  std::vector<Entry> entries_;
};

/// Trains a fresh network on every record whose fold differs from `fold`.
inline TrainResult train_prediction_fold(const std::vector<DatasetRecord>& records, const std::vector<int>& folds,
                                         int fold, const NetworkConfig& cfg, const TrainConfig& tc,
                                         const EpochCallback& on_epoch = {}, std::vector<std::string>* warnings = nullptr) {
  detail::require(records.size() == folds.size(), "train_prediction_fold: one fold per record");
  std::vector<DatasetRecord> train_set;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (folds[i] != fold) train_set.push_back(records[i]);
  const PredictionPool pool(train_set, tc.slices, tc.seed, true, warnings);
  if (pool.size() == 0) throw ConfigError("no training sub-sequences outside fold " + std::to_string(fold));
  return train(pool.sampler(), pool.size(), cfg, tc, NetworkParams::initialize(cfg, tc.seed), on_epoch);
}

// ---------------------------------------------------------------------------
// Prediction inference

/// Predicted ICVF-CT-Mask volume at time 3 in stored scale. Non-overlapping
/// S-slice windows tile the tumour extent at times 1-2 widened by
/// `margin`; a re-anchored tail window only fills slices not yet covered.
/// Slices outside every window stay empty. `days23` replaces the
/// (t2 -> t3) interval when positive.
inline Volume predict_volume(const DatasetRecord& r, const NetworkParams& p, const NetworkConfig& cfg, int S,
                             double days23 = 0.0, int margin = 2) {
  detail::require(r.times() >= 2 && r.intervals.size() >= 1, "predict_volume: need two time points");
  const Volume& ref = r.volumes[1];
  Volume out(ref.depth, ref.rows, ref.cols, ref.channels);
  const auto ext = record_extent(r, {0, 1}, margin);
  if (!ext) return out;
  int first = ext->first, last = ext->second;
  if (last - first + 1 < S) {
    // Widen short ranges so at least one full window fits.
    last = std::min(ref.depth - 1, first + S - 1);
    first = std::max(0, last - S + 1);
  }
  std::vector<bool> filled(static_cast<std::size_t>(ref.depth), false);
  const double d23 = days23 > 0 ? days23 : r.intervals.at(1);
  for (int start : window_starts(first, last, S, /*overlap=*/false)) {
    SpatioTemporalSequence seq = make_sequence(r, start, S, {0, 1});
    seq.intervals = {r.intervals.at(0), d23};
    const FuturePrediction f = predict_future(seq, p, cfg);
    for (int s = 0; s < S; ++s) {
      const int z = start + s;
      if (filled[static_cast<std::size_t>(z)]) continue;
      out.set_slice(z, f.time3[static_cast<std::size_t>(s)]);
      filled[static_cast<std::size_t>(z)] = true;
    }
  }
  return out;
}

inline std::size_t predicted_volume_voxels(const Volume& v) { return mask_of(v, kMask).count(); }

/// Scores of one test patient.
struct PatientOutcome {
  int id = 0;
  int fold = 0;
  VolumeReport network;
  double baseline_dice = 0.0;
  double baseline_rvd = 0.0;
  std::size_t v2 = 0;        // ground-truth voxels at time 2
  double true_growth = 0.0;  // (V3 - V2) / V2, ground truth
  double pred_growth = 0.0;  // same with the predicted V3
};

inline PatientOutcome evaluate_patient(const DatasetRecord& r, const Volume& predicted) {
  detail::require(r.times() >= 3, "evaluate_patient: need ground truth at time 3");
  PatientOutcome o;
  o.id = r.id;
  o.network = evaluate_volume(predicted, r.volumes[2]);
  const MaskVolume m1 = r.mask(0), m2 = r.mask(1), m3 = r.mask(2);
  const MaskVolume base = linear_baseline(m1, m2, r.intervals.at(0), r.intervals.at(1));
  const Overlap bo = overlap(base.data, m3.data);
  o.baseline_dice = dice(bo);
  o.baseline_rvd = rvd(bo);
  o.v2 = m2.count();
  o.true_growth = growth_rate(o.v2, m3.count());
  o.pred_growth = growth_rate(o.v2, o.network.v_pred);
  return o;
}

/// Cohort report: per-patient rows plus summaries, progression scores and
/// volume/growth correlations.
inline nlohmann::json cohort_report(const std::vector<PatientOutcome>& rows) {
  nlohmann::json j;
  std::vector<double> d, v, rm, hu, bd, bv, vp, vg, gp, gt;
  nlohmann::json patients = nlohmann::json::array();
  for (const PatientOutcome& o : rows) {
    nlohmann::json p = to_json(o.network);
    p["id"] = o.id;
    p["fold"] = o.fold;
    p["baseline_dice"] = o.baseline_dice;
    p["baseline_rvd"] = o.baseline_rvd;
    p["true_growth"] = o.true_growth;
    p["pred_growth"] = o.pred_growth;
    patients.push_back(p);
    d.push_back(o.network.dice);
    v.push_back(o.network.rvd);
    if (o.network.icvf_rmse) rm.push_back(*o.network.icvf_rmse);
    if (o.network.diff_hu) hu.push_back(*o.network.diff_hu);
    bd.push_back(o.baseline_dice);
    bv.push_back(o.baseline_rvd);
    vp.push_back(static_cast<double>(o.network.v_pred));
    vg.push_back(static_cast<double>(o.network.v_gt));
    gp.push_back(o.pred_growth);
    gt.push_back(o.true_growth);
  }
  j["patients"] = patients;
  j["network"] = {{"dice", to_json(summarize(d))},
                  {"rvd", to_json(summarize(v))},
                  {"icvf_rmse", to_json(summarize(rm))},
                  {"diff_hu", to_json(summarize(hu))}};
  j["linear_baseline"] = {{"dice", to_json(summarize(bd))}, {"rvd", to_json(summarize(bv))}};
  const ProgressionScores ps = progression_scores(gp, gt);
  j["progression"] = {{"sensitivity", ps.sensitivity ? nlohmann::json(*ps.sensitivity) : nlohmann::json(nullptr)},
                      {"specificity", ps.specificity ? nlohmann::json(*ps.specificity) : nlohmann::json(nullptr)},
                      {"positives", ps.positives},
                      {"negatives", ps.negatives}};
  auto safe_r = [](const std::vector<double>& x, const std::vector<double>& y) {
    try {
      return nlohmann::json(pearson_r(x, y));
    } catch (const MetricError&) {
      return nlohmann::json(nullptr);
    }
  };
  j["pearson_r"] = {{"volume", safe_r(vp, vg)}, {"growth_rate", safe_r(gp, gt)}};
  return j;
}

/// CSV with one row per patient, for plotting.
inline std::string cohort_csv(const std::vector<PatientOutcome>& rows) {
  std::string out = "id,fold,dice,rvd,icvf_rmse,diff_hu,tpv,v_pred,v_gt,baseline_dice,baseline_rvd,true_growth,pred_growth\n";
  char buf[512];
  for (const PatientOutcome& o : rows) {
    auto opt = [](const std::optional<double>& x) {
      char b[32];
      if (!x) return std::string();
      std::snprintf(b, sizeof b, "%.17g", *x);
      return std::string(b);
    };
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%s,%s,%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g\n", o.id, o.fold,
                  o.network.dice, o.network.rvd, opt(o.network.icvf_rmse).c_str(), opt(o.network.diff_hu).c_str(),
                  o.network.tpv, o.network.v_pred, o.network.v_gt, o.baseline_dice, o.baseline_rvd, o.true_growth,
                  o.pred_growth);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation

inline TrainingSample segmentation_case_sample(const SegmentationCase& c) {
  return segmentation_sample(c.images, c.masks, c.labeled_times);
}

/// Trains a segmentation network on S-slice windows (every `stride`
/// slices) of the training cases.
inline TrainResult train_segmentation(const std::vector<SegmentationCase>& cases, const NetworkConfig& cfg,
                                      const TrainConfig& tc, int stride = 5, const EpochCallback& on_epoch = {}) {
  std::vector<SegmentationCase> windows;
  for (const SegmentationCase& c : cases)
    for (SegmentationCase& w : segmentation_windows(c, tc.slices, stride)) windows.push_back(std::move(w));
  return train([&](std::size_t i) { return segmentation_case_sample(windows[i]); }, windows.size(), cfg, tc,
               NetworkParams::initialize(cfg, tc.seed), on_epoch);
}

/// Masks for every (slice, phase) of a case, index t * slices + s. The case
/// is cut into non-overlapping S-slice windows; a re-anchored tail window
/// only fills the slices the others left uncovered.
inline std::vector<FeatureMap> segment_case(const SegmentationCase& c, const NetworkParams& p,
                                            const NetworkConfig& cfg, int S = 10) {
  const int n = c.images.slices, T = c.images.times;
  if (n < S) return segment(c.images, p, cfg);
  std::vector<FeatureMap> out(static_cast<std::size_t>(n) * T);
  std::vector<bool> done(static_cast<std::size_t>(n), false);
  for (int start : window_starts(0, n - 1, S, false)) {
    const std::vector<FeatureMap> m = segment(slice_window(c, start, S).images, p, cfg);
    for (int s = 0; s < S; ++s) {
      if (done[static_cast<std::size_t>(start + s)]) continue;
      done[static_cast<std::size_t>(start + s)] = true;
      for (int t = 0; t < T; ++t)
        out[static_cast<std::size_t>(t) * n + start + s] = m[static_cast<std::size_t>(t) * S + s];
    }
  }
  return out;
}

/// Dice per labeled time point, computed over all slices of that phase.
inline std::vector<double> segmentation_dice(const SegmentationCase& c, const std::vector<FeatureMap>& masks) {
  std::vector<double> out;
  const int S = c.images.slices;
  for (int t : c.labeled_times) {
    std::vector<std::uint8_t> pred, gt;
    for (int s = 0; s < S; ++s) {
      const FeatureMap& pm = masks.at(static_cast<std::size_t>(t) * S + s);
      const FeatureMap& gm = c.masks.frame(s, t);
      for (std::size_t i = 0; i < pm.size(); ++i) {
        pred.push_back(is_foreground(pm[i]) ? 1 : 0);
        gt.push_back(gm[i] > 0.5 ? 1 : 0);
      }
    }
    out.push_back(dice(pred, gt));
  }
  return out;
}

}  // namespace stcl
