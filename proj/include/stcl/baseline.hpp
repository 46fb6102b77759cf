#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "stcl/error.hpp"
#include "stcl/volume.hpp"

namespace stcl {

/// Linear growth model: boundary distances along rays from the tumour
/// centroid at t2 are extrapolated to t3 as r3 = r2 + (r2 - r1) * d23 / d12,
/// then rasterized. Rays are 3D unless the volume is a single slice.
struct LinearBaselineConfig {
  int polar_bins = 48;
  int azimuth_bins = 96;
  double march_step = 0.05;
};

namespace detail {

struct RayGrid {
  bool planar = false;
  int polar = 1;
  int azimuth = 1;

  std::size_t size() const { return static_cast<std::size_t>(polar) * azimuth; }
  std::array<double, 3> direction(std::size_t i) const {
    const int p = static_cast<int>(i / azimuth), a = static_cast<int>(i % azimuth);
    const double phi = 2.0 * std::numbers::pi * (a + 0.5) / azimuth;
    if (planar) return {0.0, std::sin(phi), std::cos(phi)};
    const double theta = std::numbers::pi * (p + 0.5) / polar;
    return {std::cos(theta), std::sin(theta) * std::sin(phi), std::sin(theta) * std::cos(phi)};
  }
  std::size_t bin(double dz, double dy, double dx) const {
    const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
    double phi = std::atan2(dy, dx);
    if (phi < 0) phi += 2.0 * std::numbers::pi;
    int a = static_cast<int>(phi / (2.0 * std::numbers::pi) * azimuth);
    a = std::min(a, azimuth - 1);
    int p = 0;
    if (!planar) {
      const double theta = std::acos(std::clamp(dz / r, -1.0, 1.0));
      p = std::min(static_cast<int>(theta / std::numbers::pi * polar), polar - 1);
    }
    return static_cast<std::size_t>(p) * azimuth + a;
  }
};

/// Boundary radius of `m` along `u` from `c`: the distance at which the
/// nearest voxel first turns background, less half a voxel.
inline double boundary_radius(const MaskVolume& m, const std::array<double, 3>& c, const std::array<double, 3>& u,
                              double step) {
  const double limit = std::sqrt(double(m.depth) * m.depth + double(m.rows) * m.rows + double(m.cols) * m.cols);
  for (double t = 0.0; t <= limit; t += step) {
    const int z = static_cast<int>(std::lround(c[0] + t * u[0]));
    const int y = static_cast<int>(std::lround(c[1] + t * u[1]));
    const int x = static_cast<int>(std::lround(c[2] + t * u[2]));
    if (z < 0 || z >= m.depth || y < 0 || y >= m.rows || x < 0 || x >= m.cols || !m.at(z, y, x))
      return std::max(0.0, t - 0.5);
  }
  return limit;
}

}  // namespace detail

inline std::array<double, 3> centroid(const MaskVolume& m) {
  std::array<double, 3> c{0, 0, 0};
  std::size_t n = 0;
  for (int z = 0; z < m.depth; ++z)
    for (int y = 0; y < m.rows; ++y)
      for (int x = 0; x < m.cols; ++x)
        if (m.at(z, y, x)) {
          c[0] += z;
          c[1] += y;
          c[2] += x;
          ++n;
        }
  if (n == 0) throw ContractError("centroid of an empty mask");
  for (double& v : c) v /= static_cast<double>(n);
  return c;
}

inline MaskVolume linear_baseline(const MaskVolume& t1, const MaskVolume& t2, double days12, double days23,
                                  const LinearBaselineConfig& cfg = {}) {
  detail::require(t1.same_shape(t2), "linear_baseline: masks differ in shape");
  if (t1.count() == 0 || t2.count() == 0) throw ContractError("linear_baseline: empty mask");
  detail::require(days12 > 0 && days23 >= 0, "linear_baseline: intervals must be positive");
  detail::RayGrid grid;
  grid.planar = t2.depth == 1;
  grid.polar = grid.planar ? 1 : cfg.polar_bins;
  grid.azimuth = grid.planar ? 4 * cfg.azimuth_bins : cfg.azimuth_bins;

  const std::array<double, 3> c = centroid(t2);
  std::vector<double> r3(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto u = grid.direction(i);
    const double r1 = detail::boundary_radius(t1, c, u, cfg.march_step);
    const double r2 = detail::boundary_radius(t2, c, u, cfg.march_step);
    r3[i] = std::max(0.0, r2 + (r2 - r1) * days23 / days12);
  }
  MaskVolume out(t2.depth, t2.rows, t2.cols);
  for (int z = 0; z < out.depth; ++z)
    for (int y = 0; y < out.rows; ++y)
      for (int x = 0; x < out.cols; ++x) {
        const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
        const double d = std::sqrt(dz * dz + dy * dy + dx * dx);
        if (d < 1e-12) {
          out.at(z, y, x) = 1;
          continue;
        }
        out.at(z, y, x) = d <= r3[grid.bin(dz, dy, dx)] + 1e-9 ? 1 : 0;
      }
  return out;
}

}  // namespace stcl
