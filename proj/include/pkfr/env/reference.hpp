#pragma once

#include <array>
#include <cmath>

#include "pkfr/env/robot.hpp"

namespace pkfr::env {

/// Motion-prior state: projected gravity (2), joint offsets from nominal (4),
/// joint velocities (4), body forward velocity, pitch rate.
inline constexpr std::size_t kAmpDim = 12;
using AmpVec = std::array<double, kAmpDim>;

/// Scripted trot-like gait standing in for motion capture.
struct ReferenceGait {
  double period = 0.25;      // seconds per cycle
  double hip_amplitude = 0.15;
  double knee_lift = 0.2;
  double forward_speed = 0.4;  // measured mean of the open-loop replay on flat ground
  double leg_offset = 0.5;   // phase lag of the rear leg
  std::array<double, kFootCount> knee_direction = {-1.0, 1.0};  // flexion sign per leg

  /// Joint offsets and their phase derivatives for one leg at leg phase p.
  static void leg(double p, double hip_amp, double lift, double& hip, double& knee, double& dhip,
                  double& dknee) {
    // lift carries the flexion sign of the knee
    const double w = 2.0 * M_PI;
    const double c = std::cos(w * p), s = std::sin(w * p);
    hip = hip_amp * s;
    dhip = hip_amp * w * c;
    // The knee flexes only while the hip swings forward.
    const double up = std::max(0.0, c);
    knee = lift * up * up;
    dknee = -2.0 * lift * up * s * w;
  }

  JointVec offsets(double phase, JointVec* rates = nullptr) const {
    JointVec q{}, dq{};
    for (std::size_t l = 0; l < kFootCount; ++l) {
      const double p = phase + (l == 0 ? 0.0 : leg_offset);
      leg(p, hip_amplitude, knee_direction[l] * knee_lift, q[2 * l], q[2 * l + 1], dq[2 * l], dq[2 * l + 1]);
    }
    if (rates) {
      for (auto& r : dq) r /= period;
      *rates = dq;
    }
    return q;
  }
};

/// Reference AmpState at a gait phase; periodic with period 1.
inline AmpVec reference_motion(double phase, const ReferenceGait& g = {}) {
  phase -= std::floor(phase);
  JointVec rates{};
  const JointVec q = g.offsets(phase, &rates);
  AmpVec s{};
  s[0] = 0.0;
  s[1] = -1.0;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    s[2 + j] = q[j];
    s[6 + j] = rates[j];
  }
  s[10] = g.forward_speed;
  s[11] = 0.0;
  return s;
}

}  // namespace pkfr::env
