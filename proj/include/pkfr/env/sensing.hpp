#pragma once

#include <cmath>
#include <vector>

#include "pkfr/env/robot.hpp"

namespace pkfr::env {

struct DepthConfig {
  std::size_t rays = 32;
  double angle_min_deg = 10.0;  // below the body's forward axis
  double angle_max_deg = 80.0;
  double d_max = 5.0;
  double march_step = 0.02;

  double angle(std::size_t k) const {
    const double a = rays == 1 ? angle_min_deg
                               : angle_min_deg + (angle_max_deg - angle_min_deg) * static_cast<double>(k) /
                                                     static_cast<double>(rays - 1);
    return a * M_PI / 180.0;
  }
};

namespace detail {

inline bool below_surface(const TerrainProfile& t, Vec2 p) {
  return t.supported_at(p.x) && p.z <= t.height_at(p.x);
}

}  // namespace detail

/// Distance along one ray from `origin` at `down` radians below the
/// horizontal, found by marching and then bisecting the first crossing.
inline double cast_ray(const TerrainProfile& t, Vec2 origin, double down, const DepthConfig& cfg) {
  const Vec2 dir{std::cos(down), -std::sin(down)};
  if (detail::below_surface(t, origin)) return 0.0;
  double lo = 0.0;
  for (double d = cfg.march_step;; d += cfg.march_step) {
    const double hi = std::min(d, cfg.d_max);
    if (detail::below_surface(t, origin + hi * dir)) {
      double a = lo, b = hi;
      for (int it = 0; it < 50; ++it) {
        const double mid = 0.5 * (a + b);
        if (detail::below_surface(t, origin + mid * dir)) b = mid; else a = mid;
      }
      return b;
    }
    if (hi >= cfg.d_max) return cfg.d_max;
    lo = hi;
  }
}

/// Ray distances from the base, angles measured relative to the body axis.
inline std::vector<double> depth_scan(const RobotState& s, const TerrainProfile& t, const DepthConfig& cfg) {
  std::vector<double> out(cfg.rays);
  for (std::size_t k = 0; k < cfg.rays; ++k) out[k] = cast_ray(t, {s.x, s.z}, cfg.angle(k) - s.pitch, cfg);
  return out;
}

}  // namespace pkfr::env
