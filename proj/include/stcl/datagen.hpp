#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "stcl/error.hpp"
#include "stcl/network.hpp"
#include "stcl/random.hpp"
#include "stcl/volume.hpp"

namespace stcl {

// ---------------------------------------------------------------------------
// Storage windows

/// Soft-tissue CT window: stored 0 is -100 HU, stored 255 is 200 HU.
inline constexpr double kHuLow = -100.0;
inline constexpr double kHuHigh = 200.0;

inline double hu_to_stored(double hu) {
  return std::clamp((hu - kHuLow) / (kHuHigh - kHuLow) * 255.0, 0.0, 255.0);
}
inline double stored_to_hu(double stored) { return kHuLow + stored / 255.0 * (kHuHigh - kHuLow); }

/// ICVF in [0, 100] to [0, 255].
inline double icvf_to_stored(double icvf) { return std::clamp(icvf * 2.55, 0.0, 255.0); }
inline double stored_to_icvf(double stored) { return stored / 2.55; }

// ---------------------------------------------------------------------------
// Synthetic longitudinal tumours

/// Parameters of one synthetic patient. Coordinates are (slice, row, col)
/// inside the 32^3 crop; the crop is centred on the tumour.
struct SyntheticPatient {
  int id = 0;
  std::uint64_t seed = 0;
  int size = 32;
  int times = 4;
  std::array<double, 3> center{15.5, 15.5, 15.5};
  std::array<double, 3> radii{6.0, 6.0, 6.0};  // at t1
  std::vector<double> intervals;                // days, times - 1 entries
  std::vector<double> growth;                   // V(t+1)/V(t) - 1 per interval
  /// Low-frequency boundary perturbation: r(u) = 1 + sum_j a_j ((u.d_j)^2 - 1/3).
  std::array<double, 3> shape_amplitude{0.0, 0.0, 0.0};
  std::array<std::array<double, 3>, 3> shape_axis{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  double icvf_level = 65.0;     // tumour ICVF, [40, 90]
  double ct_tumor_hu = 110.0;
  double ct_background_hu = 40.0;
  double noise_sigma = 4.0;     // in stored units

  /// Radius multiplier at time t (0-based): cube root of the volume ratio.
  double scale_at(int t) const {
    double v = 1.0;
    for (int k = 0; k < t; ++k) v *= 1.0 + growth.at(static_cast<std::size_t>(k));
    return std::cbrt(v);
  }

  /// Normalized boundary radius in direction u (unit vector).
  double boundary(const std::array<double, 3>& u) const {
    double r = 1.0;
    for (int j = 0; j < 3; ++j) {
      const auto& d = shape_axis[static_cast<std::size_t>(j)];
      const double c = u[0] * d[0] + u[1] * d[1] + u[2] * d[2];
      r += shape_amplitude[static_cast<std::size_t>(j)] * (c * c - 1.0 / 3.0);
    }
    return r;
  }

  bool inside(int t, double z, double y, double x) const {
    const double s = scale_at(t);
    const std::array<double, 3> q{(z - center[0]) / (radii[0] * s), (y - center[1]) / (radii[1] * s),
                                  (x - center[2]) / (radii[2] * s)};
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
    if (n == 0.0) return true;
    return n <= boundary({q[0] / n, q[1] / n, q[2] / n});
  }

  /// Voxel-centre rasterization of the tumour at time t.
  MaskVolume mask(int t) const {
    MaskVolume m(size, size, size);
    for (int z = 0; z < size; ++z)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) m.at(z, y, x) = inside(t, z, y, x) ? 1 : 0;
    return m;
  }
};

/// Number of slices containing at least one foreground voxel.
inline int tumor_slice_count(const MaskVolume& m) {
  int n = 0;
  for (int z = 0; z < m.depth; ++z) {
    bool any = false;
    for (int i = 0; i < m.rows * m.cols && !any; ++i) any = m.data[static_cast<std::size_t>(z) * m.rows * m.cols + i];
    n += any ? 1 : 0;
  }
  return n;
}

/// First and last slice holding foreground, or nullopt for an empty mask.
inline std::optional<std::pair<int, int>> tumor_extent(const MaskVolume& m) {
  int lo = -1, hi = -1;
  const std::size_t plane = static_cast<std::size_t>(m.rows) * m.cols;
  for (int z = 0; z < m.depth; ++z) {
    bool any = false;
    for (std::size_t i = 0; i < plane && !any; ++i) any = m.data[z * plane + i];
    if (any) {
      if (lo < 0) lo = z;
      hi = z;
    }
  }
  if (lo < 0) return std::nullopt;
  return std::make_pair(lo, hi);
}

namespace detail {

inline double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal(mean, sd);
    if (v >= lo && v <= hi) return v;
  }
  return std::clamp(mean, lo, hi);
}

inline std::array<double, 3> random_unit(Rng& rng) {
  for (;;) {
    std::array<double, 3> v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

inline bool fits_crop(const SyntheticPatient& p) {
  for (int t = 0; t < p.times; ++t) {
    const double s = p.scale_at(t);
    double bulge = 1.0;
    for (double a : p.shape_amplitude) bulge += std::abs(a) * 2.0 / 3.0;
    for (int k = 0; k < 3; ++k)
      if (p.radii[static_cast<std::size_t>(k)] * s * bulge > p.center[static_cast<std::size_t>(k)] - 1.0) return false;
  }
  return true;
}

}  // namespace detail

/// Growth envelope of the cohort. Realized per-interval growth follows an
/// annualized rate drawn per interval and compounded over the interval
/// length, then clipped to the observed range.
struct GrowthEnvelope {
  double first_mean = 0.240, first_sd = 0.231;
  double later_mean = 0.088, later_sd = 0.197;
  double min_rate = -0.232, max_rate = 0.956;
  double reference_days = 398.0;
  double interval_mean = 398.0, interval_sd = 90.0;
  double interval_min = 168.0, interval_max = 804.0;
  /// Shift of the mean rate per standard deviation of tumour ICVF.
  double icvf_coupling = 0.5;
};

/// Draws the parameters of patient `id` from `seed`. Draws are repeated
/// until the tumour stays inside the crop and spans at least five slices at
/// every time point.
inline SyntheticPatient sample_patient(std::uint64_t seed, int id = 0, const GrowthEnvelope& env = {}) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    SyntheticPatient p;
    p.id = id;
    p.seed = seed;
    for (double& c : p.center) c = 15.5 + rng.uniform(-0.4, 0.4);
    p.radii = {rng.uniform(4.0, 7.5), rng.uniform(5.0, 9.0), rng.uniform(5.0, 9.0)};
    for (std::size_t j = 0; j < 3; ++j) {
      p.shape_amplitude[j] = rng.uniform(-0.12, 0.12);
      p.shape_axis[j] = detail::random_unit(rng);
    }
    p.icvf_level = rng.uniform(40.0, 90.0);
    p.ct_tumor_hu = rng.uniform(90.0, 150.0);
    p.ct_background_hu = rng.uniform(20.0, 60.0);
    p.noise_sigma = rng.uniform(2.0, 6.0);
    const double z = (p.icvf_level - 65.0) / (50.0 / std::sqrt(12.0));
    for (int k = 0; k + 1 < p.times; ++k) {
      const double days = std::clamp(rng.normal(env.interval_mean, env.interval_sd), env.interval_min, env.interval_max);
      const double mean = k == 0 ? env.first_mean : env.later_mean;
      const double sd = k == 0 ? env.first_sd : env.later_sd;
      const double annual = detail::truncated_normal(rng, mean + env.icvf_coupling * sd * z, sd, -0.6, 1.5);
      const double g = std::pow(1.0 + annual, days / env.reference_days) - 1.0;
      p.intervals.push_back(days);
      p.growth.push_back(std::clamp(g, env.min_rate, env.max_rate));
    }
    if (!detail::fits_crop(p)) continue;
    bool ok = true;
    for (int t = 0; t < p.times && ok; ++t) ok = tumor_slice_count(p.mask(t)) >= 5;
    if (ok) return p;
  }
  throw ContractError("sample_patient: no admissible tumour after 1000 draws");
}

/// A patient's aligned ICVF-CT-Mask volumes at every time point, values in
/// stored [0, 255] scale.
struct DatasetRecord {
  int id = 0;
  std::uint64_t seed = 0;
  std::vector<Volume> volumes;    // per time point, depth x 32 x 32 x 3
  std::vector<double> intervals;  // days between consecutive time points

  int times() const { return static_cast<int>(volumes.size()); }
  MaskVolume mask(int t) const { return mask_of(volumes.at(static_cast<std::size_t>(t)), kMask); }
  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

/// Renders the three channels of a patient at time t. ICVF is the tumour
/// level inside the mask and 0 outside; CT has tumour and background
/// contrast levels. Both carry Gaussian noise; the mask is exact.
inline Volume render_patient(const SyntheticPatient& p, int t, Rng& noise) {
  const MaskVolume m = p.mask(t);
  Volume v(p.size, p.size, p.size, 3);
  // Slow ICVF drift inside the tumour so the channel is not a flat copy of the mask.
  const double icvf_t = std::clamp(p.icvf_level * (1.0 + 0.03 * t), 0.0, 100.0);
  for (int z = 0; z < p.size; ++z)
    for (int y = 0; y < p.size; ++y)
      for (int x = 0; x < p.size; ++x) {
        const bool fg = m.at(z, y, x) != 0;
        const double icvf = fg ? icvf_to_stored(icvf_t) + noise.normal(0.0, p.noise_sigma) : 0.0;
        const double ct = hu_to_stored(fg ? p.ct_tumor_hu : p.ct_background_hu) + noise.normal(0.0, p.noise_sigma);
        v.at(z, y, x, kIcvf) = static_cast<float>(std::clamp(icvf, 0.0, 255.0));
        v.at(z, y, x, kCt) = static_cast<float>(std::clamp(ct, 0.0, 255.0));
        v.at(z, y, x, kMask) = fg ? 255.0f : 0.0f;
      }
  return v;
}

inline DatasetRecord render_record(const SyntheticPatient& p) {
  DatasetRecord r;
  r.id = p.id;
  r.seed = p.seed;
  r.intervals = p.intervals;
  Rng noise(p.seed ^ 0xC0FFEEULL);
  for (int t = 0; t < p.times; ++t) r.volumes.push_back(render_patient(p, t, noise));
  return r;
}

/// Volumes at t1..t4 for a patient drawn from `seed`.
inline DatasetRecord generate_patient(std::uint64_t seed, int id = 0) { return render_record(sample_patient(seed, id)); }

/// Seed of patient `id` in a cohort generated from `cohort_seed`.
inline std::uint64_t patient_seed(std::uint64_t cohort_seed, int id) {
  return Rng(cohort_seed).fork(static_cast<std::uint64_t>(id) + 1).next();
}

/// Assigns patients to `folds` folds round-robin over a seeded permutation.
inline std::vector<int> fold_assignment(int n, int folds, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed ^ 0xF01DULL);
  rng.shuffle(order);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) fold[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = k % folds;
  return fold;
}

// ---------------------------------------------------------------------------
// Augmentation

/// One point of the augmentation grid. `view` 0/1/2 reslices along the
/// axial/coronal/sagittal axis, `rotation` counts in-plane quarter turns,
/// (dy, dx) is an in-plane shift with zero fill, `reverse` flips slice order.
struct AugmentSpec {
  int view = 0;
  int rotation = 0;
  int dy = 0;
  int dx = 0;
  bool reverse = false;
  friend bool operator==(const AugmentSpec&, const AugmentSpec&) = default;
};

/// Reslices so that axis `view` becomes the slice axis.
inline Volume reslice(const Volume& v, int view) {
  if (view == 0) return v;
  detail::require(view == 1 || view == 2, "reslice: view must be 0, 1 or 2");
  if (view == 1) {
    Volume out(v.rows, v.depth, v.cols, v.channels);
    for (int z = 0; z < v.depth; ++z)
      for (int r = 0; r < v.rows; ++r)
        for (int c = 0; c < v.cols; ++c)
          for (int k = 0; k < v.channels; ++k) out.at(r, z, c, k) = v.at(z, r, c, k);
    return out;
  }
  Volume out(v.cols, v.depth, v.rows, v.channels);
  for (int z = 0; z < v.depth; ++z)
    for (int r = 0; r < v.rows; ++r)
      for (int c = 0; c < v.cols; ++c)
        for (int k = 0; k < v.channels; ++k) out.at(c, z, r, k) = v.at(z, r, c, k);
  return out;
}

/// Rotates every slice by `quarter_turns` x 90 degrees counter-clockwise.
inline Volume rotate90(const Volume& v, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return v;
  const bool swap = q % 2 == 1;
  Volume out(v.depth, swap ? v.cols : v.rows, swap ? v.rows : v.cols, v.channels);
  for (int z = 0; z < v.depth; ++z)
    for (int r = 0; r < v.rows; ++r)
      for (int c = 0; c < v.cols; ++c) {
        int rr = r, cc = c;
        if (q == 1) {
          rr = v.cols - 1 - c;
          cc = r;
        } else if (q == 2) {
          rr = v.rows - 1 - r;
          cc = v.cols - 1 - c;
        } else {
          rr = c;
          cc = v.rows - 1 - r;
        }
        for (int k = 0; k < v.channels; ++k) out.at(z, rr, cc, k) = v.at(z, r, c, k);
      }
  return out;
}

/// Shifts every slice by (dy, dx) pixels; vacated pixels are zero.
inline Volume translate(const Volume& v, int dy, int dx) {
  if (dy == 0 && dx == 0) return v;
  Volume out(v.depth, v.rows, v.cols, v.channels);
  for (int z = 0; z < v.depth; ++z)
    for (int r = 0; r < v.rows; ++r)
      for (int c = 0; c < v.cols; ++c) {
        const int sr = r - dy, sc = c - dx;
        if (sr < 0 || sr >= v.rows || sc < 0 || sc >= v.cols) continue;
        for (int k = 0; k < v.channels; ++k) out.at(z, r, c, k) = v.at(z, sr, sc, k);
      }
  return out;
}

inline Volume reverse_slices(const Volume& v) {
  Volume out(v.depth, v.rows, v.cols, v.channels);
  const std::size_t n = static_cast<std::size_t>(v.rows) * v.cols * v.channels;
  for (int z = 0; z < v.depth; ++z)
    std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(z * n), n,
                out.data.begin() + static_cast<std::ptrdiff_t>((v.depth - 1 - z) * n));
  return out;
}

inline Volume augment(const Volume& v, const AugmentSpec& a) {
  Volume out = translate(rotate90(reslice(v, a.view), a.rotation), a.dy, a.dx);
  return a.reverse ? reverse_slices(out) : out;
}

/// Applies the same transform to every time point, which keeps the record
/// spatio-temporally aligned.
inline DatasetRecord augment(const DatasetRecord& r, const AugmentSpec& a) {
  DatasetRecord out = r;
  for (Volume& v : out.volumes) v = augment(v, a);
  return out;
}

/// The full augmentation grid for one record: 3 views x 4 rotations x
/// {forward, reversed}, each with its own random shift in [-2, 2]^2.
inline std::vector<AugmentSpec> augmentation_grid(std::uint64_t seed) {
  Rng rng(seed ^ 0xA061ULL);
  std::vector<AugmentSpec> out;
  for (int view = 0; view < 3; ++view)
    for (int rot = 0; rot < 4; ++rot)
      for (int rev = 0; rev < 2; ++rev) {
        AugmentSpec a{view, rot, rng.uniform_int(-2, 2), rng.uniform_int(-2, 2), rev == 1};
        out.push_back(a);
      }
  return out;
}

/// Eager augmentation: every grid point applied to `r`.
inline std::vector<DatasetRecord> augment_all(const DatasetRecord& r, std::uint64_t seed) {
  std::vector<DatasetRecord> out;
  for (const AugmentSpec& a : augmentation_grid(seed)) out.push_back(augment(r, a));
  return out;
}

// ---------------------------------------------------------------------------
// Sub-sequence windows

/// First slices of S-slice windows over [first, last]. Training windows
/// slide with stride 1. Test windows tile the range without overlap; a
/// remainder gets one extra window re-anchored to end at `last`. Returns
/// an empty list when the range holds fewer than S slices.
inline std::vector<int> window_starts(int first, int last, int S, bool overlap) {
  detail::require(S >= 1, "window_starts: S must be >= 1");
  std::vector<int> starts;
  const int n = last - first + 1;
  if (n < S) return starts;
  if (overlap) {
    for (int s = first; s + S - 1 <= last; ++s) starts.push_back(s);
    return starts;
  }
  int s = first;
  for (; s + S - 1 <= last; s += S) starts.push_back(s);
  if (s <= last) starts.push_back(last - S + 1);
  return starts;
}

/// S consecutive slices starting at `start` for the time points `times`,
/// scaled to [0, 1]. Intervals are the gaps between the chosen times.
inline SpatioTemporalSequence make_sequence(const DatasetRecord& r, int start, int S, const std::vector<int>& times) {
  SpatioTemporalSequence seq(S, static_cast<int>(times.size()));
  for (std::size_t k = 0; k < times.size(); ++k) {
    const Volume& v = r.volumes.at(static_cast<std::size_t>(times[k]));
    detail::require(start >= 0 && start + S <= v.depth, "make_sequence: window outside volume");
    for (int s = 0; s < S; ++s) seq.frame(s, static_cast<int>(k)) = v.slice(start + s, 1.0 / 255.0);
  }
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    double days = 0.0;
    for (int t = times[k]; t < times[k + 1]; ++t) days += r.intervals.at(static_cast<std::size_t>(t));
    seq.intervals.push_back(days);
  }
  return seq;
}

/// Union of tumour slices over the given time points, widened by `margin`
/// and clipped to the volume.
inline std::optional<std::pair<int, int>> record_extent(const DatasetRecord& r, const std::vector<int>& times,
                                                        int margin = 0) {
  std::optional<std::pair<int, int>> ext;
  for (int t : times) {
    const auto e = tumor_extent(r.mask(t));
    if (!e) continue;
    if (!ext) ext = e;
    else ext = std::make_pair(std::min(ext->first, e->first), std::max(ext->second, e->second));
  }
  if (ext) {
    const int depth = r.volumes.front().depth;
    ext->first = std::max(0, ext->first - margin);
    ext->second = std::min(depth - 1, ext->second + margin);
  }
  return ext;
}

/// Sub-sequences of a record for the time points `times`. Returns an empty
/// list (and sets `skipped`) when the tumour spans fewer than S slices.
inline std::vector<SpatioTemporalSequence> crop_subsequences(const DatasetRecord& r, int S, bool overlap,
                                                             const std::vector<int>& times, bool* skipped = nullptr) {
  std::vector<SpatioTemporalSequence> out;
  const auto ext = record_extent(r, times);
  const std::vector<int> starts = ext ? window_starts(ext->first, ext->second, S, overlap) : std::vector<int>{};
  if (skipped) *skipped = starts.empty();
  for (int s : starts) out.push_back(make_sequence(r, s, S, times));
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation phantoms

/// Deforming ellipsoid in noisy single-channel frames: `slices` cross
/// sections at `times` phases. The in-plane radii contract linearly from
/// the first to the last phase; labels exist only at those two phases.
struct SegmentationCase {
  SpatioTemporalSequence images;  // 1 channel, [0, 1]
  SpatioTemporalSequence masks;   // 1 channel, {0, 1}
  std::vector<int> labeled_times;
};

struct SegmentationPhantomConfig {
  int size = 96;
  int slices = 20;
  int times = 6;
  double noise_sigma = 0.10;
};

inline SegmentationCase generate_segmentation_case(std::uint64_t seed, const SegmentationPhantomConfig& c = {}) {
  Rng rng(seed);
  const double cy = c.size / 2.0 + rng.uniform(-8.0, 8.0);
  const double cx = c.size / 2.0 + rng.uniform(-8.0, 8.0);
  const double ry = rng.uniform(14.0, 26.0);
  const double rx = rng.uniform(14.0, 26.0);
  const double rz = c.slices * rng.uniform(0.6, 0.8);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double contraction = rng.uniform(0.15, 0.35);
  const double drift_y = rng.uniform(-3.0, 3.0), drift_x = rng.uniform(-3.0, 3.0);
  const double inside_level = rng.uniform(0.55, 0.75);
  const double outside_level = rng.uniform(0.2, 0.35);
  const double ca = std::cos(angle), sa = std::sin(angle);

  SegmentationCase out;
  out.images = SpatioTemporalSequence(c.slices, c.times);
  out.masks = SpatioTemporalSequence(c.slices, c.times);
  out.labeled_times = {0, c.times - 1};
  const double z0 = (c.slices - 1) / 2.0;
  for (int t = 0; t < c.times; ++t) {
    const double phase = c.times > 1 ? static_cast<double>(t) / (c.times - 1) : 0.0;
    const double k = 1.0 - contraction * phase;
    for (int s = 0; s < c.slices; ++s) {
      const double dz = (s - z0) / rz;
      const double section = std::sqrt(std::max(0.0, 1.0 - dz * dz));
      FeatureMap img(c.size, c.size, 1), mask(c.size, c.size, 1);
      for (int y = 0; y < c.size; ++y)
        for (int x = 0; x < c.size; ++x) {
          const double py = y - (cy + drift_y * phase), px = x - (cx + drift_x * phase);
          const double u = (ca * px + sa * py) / (rx * k * section + 1e-12);
          const double v = (-sa * px + ca * py) / (ry * k * section + 1e-12);
          const bool fg = section > 0.0 && u * u + v * v <= 1.0;
          mask.at(y, x, 0) = fg ? 1.0 : 0.0;
          img.at(y, x, 0) = std::clamp((fg ? inside_level : outside_level) + rng.normal(0.0, c.noise_sigma), 0.0, 1.0);
        }
      out.images.frame(s, t) = std::move(img);
      out.masks.frame(s, t) = std::move(mask);
    }
  }
  return out;
}

/// Slices [start, start + S) of a segmentation case at every phase.
inline SegmentationCase slice_window(const SegmentationCase& c, int start, int S) {
  detail::require(start >= 0 && S >= 1 && start + S <= c.images.slices, "slice_window: window outside the case");
  SegmentationCase w;
  w.images = SpatioTemporalSequence(S, c.images.times);
  w.masks = SpatioTemporalSequence(S, c.images.times);
  w.labeled_times = c.labeled_times;
  for (int t = 0; t < c.images.times; ++t)
    for (int s = 0; s < S; ++s) {
      w.images.frame(s, t) = c.images.frame(start + s, t);
      w.masks.frame(s, t) = c.masks.frame(start + s, t);
    }
  return w;
}

/// Training instances: S-slice windows every `stride` slices, the last one
/// anchored at the final slice.
inline std::vector<SegmentationCase> segmentation_windows(const SegmentationCase& c, int S, int stride) {
  detail::require(stride >= 1, "segmentation_windows: stride must be positive");
  std::vector<SegmentationCase> out;
  const int n = c.images.slices;
  if (n < S) return out;
  int start = 0;
  for (; start + S <= n; start += stride) out.push_back(slice_window(c, start, S));
  if (start - stride != n - S) out.push_back(slice_window(c, n - S, S));
  return out;
}

}  // namespace stcl
