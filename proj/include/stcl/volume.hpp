#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stcl/error.hpp"
#include "stcl/feature_map.hpp"

namespace stcl {

/// Channels of an ICVF-CT-Mask frame.
enum Channel : int { kIcvf = 0, kCt = 1, kMask = 2 };

/// depth x rows x cols x channels volume of 32-bit floats stored in
/// (slice, row, col, channel) order, the same order as the file payload.
struct Volume {
  int depth = 0;
  int rows = 0;
  int cols = 0;
  int channels = 0;
  std::vector<float> data;

  Volume() = default;
  Volume(int d, int r, int c, int ch, float fill = 0.0f) : depth(d), rows(r), cols(c), channels(ch) {
    if (d <= 0 || r <= 0 || c <= 0 || ch <= 0) throw ConfigError("volume dimensions must be positive");
    data.assign(static_cast<std::size_t>(d) * r * c * ch, fill);
  }

  std::size_t index(int z, int r, int c, int ch) const {
    return ((static_cast<std::size_t>(z) * rows + r) * cols + c) * channels + ch;
  }
  float& at(int z, int r, int c, int ch) { return data[index(z, r, c, ch)]; }
  float at(int z, int r, int c, int ch) const { return data[index(z, r, c, ch)]; }

  bool same_shape(const Volume& o) const {
    return depth == o.depth && rows == o.rows && cols == o.cols && channels == o.channels;
  }
  std::string shape() const {
    return std::to_string(depth) + "x" + std::to_string(rows) + "x" + std::to_string(cols) + "x" +
           std::to_string(channels);
  }

  /// Slice z as a FeatureMap scaled by `k` (1/255 turns storage values
  /// into network inputs).
  FeatureMap slice(int z, double k = 1.0) const {
    detail::require(z >= 0 && z < depth, "Volume::slice: index out of range");
    FeatureMap f(rows, cols, channels);
    const std::size_t n = static_cast<std::size_t>(rows) * cols * channels;
    const float* src = data.data() + static_cast<std::size_t>(z) * n;
    for (std::size_t i = 0; i < n; ++i) f[i] = static_cast<double>(src[i]) * k;
    return f;
  }

  void set_slice(int z, const FeatureMap& f, double k = 1.0) {
    detail::require(z >= 0 && z < depth && f.rows() == rows && f.cols() == cols && f.channels() == channels,
                    "Volume::set_slice: shape mismatch");
    const std::size_t n = f.size();
    float* dst = data.data() + static_cast<std::size_t>(z) * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(f[i] * k);
  }

  friend bool operator==(const Volume&, const Volume&) = default;
};

/// Binary volume (0/1 per voxel) in (slice, row, col) order.
struct MaskVolume {
  int depth = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  MaskVolume() = default;
  MaskVolume(int d, int r, int c) : depth(d), rows(r), cols(c), data(static_cast<std::size_t>(d) * r * c, 0) {}

  std::size_t index(int z, int r, int c) const { return (static_cast<std::size_t>(z) * rows + r) * cols + c; }
  std::uint8_t& at(int z, int r, int c) { return data[index(z, r, c)]; }
  std::uint8_t at(int z, int r, int c) const { return data[index(z, r, c)]; }
  bool same_shape(const MaskVolume& o) const { return depth == o.depth && rows == o.rows && cols == o.cols; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v ? 1 : 0;
    return n;
  }
  friend bool operator==(const MaskVolume&, const MaskVolume&) = default;
};

/// Foreground rule for stored [0, 255] mask values.
inline bool is_foreground(double stored_value) { return stored_value >= 128.0; }

/// Maps a stored mask value to {0, 255}. Idempotent.
inline double binarize(double stored_value) { return is_foreground(stored_value) ? 255.0 : 0.0; }

inline MaskVolume mask_of(const Volume& v, int channel) {
  detail::require(channel >= 0 && channel < v.channels, "mask_of: channel out of range");
  MaskVolume m(v.depth, v.rows, v.cols);
  for (int z = 0; z < v.depth; ++z)
    for (int r = 0; r < v.rows; ++r)
      for (int c = 0; c < v.cols; ++c) m.at(z, r, c) = is_foreground(v.at(z, r, c, channel)) ? 1 : 0;
  return m;
}

}  // namespace stcl
