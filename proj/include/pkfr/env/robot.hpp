#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>

#include "pkfr/env/terrain.hpp"

namespace pkfr::env {

inline constexpr std::size_t kJointCount = 4;  // front hip, front knee, rear hip, rear knee
inline constexpr std::size_t kFootCount = 2;
using JointVec = std::array<double, kJointCount>;

struct Vec2 {
  double x = 0.0, z = 0.0;
};
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.z + b.z}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.z - b.z}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.z}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.z * b.z; }

struct RobotConfig {
  double torso_mass = 2.0;
  double torso_inertia = 0.25;  // long body with mass toward the ends
  double hip_offset = 0.25;  // front hip at +offset, rear hip at -offset along the body axis
  double thigh = 0.3;
  double shank = 0.3;
  double joint_inertia = 0.08;
  JointVec nominal = {0.3, -0.6, -0.3, 0.6};  // front knee forward, rear knee back

  double kp = 40.0;
  double kd = 1.0;
  double action_scale = 0.5;
  double action_clip = 2.0;

  double gravity = 9.81;
  double contact_stiffness = 3000.0;
  double contact_damping = 60.0;
  double tangential_stiffness = 3000.0;
  double tangential_damping = 30.0;
  double friction = 1.0;
  double wall_search = 0.15;  // horizontal reach when resolving side contact with a step edge

  double physics_dt = 0.005;
  int substeps = 4;

  double control_dt() const { return physics_dt * substeps; }
};

struct RobotState {
  double x = 0.0, z = 0.0, pitch = 0.0;
  double vx = 0.0, vz = 0.0, omega = 0.0;
  JointVec q{}, qd{};
  std::array<bool, kFootCount> contact{};
  std::array<bool, kFootCount> anchored{};
  std::array<Vec2, kFootCount> anchor{};
  JointVec a_prev{};

  /// Forward velocity expressed in the body frame.
  double body_forward_velocity() const { return std::cos(pitch) * vx + std::sin(pitch) * vz; }
};

namespace kin {

inline Vec2 rotate(double th, Vec2 v) {
  const double c = std::cos(th), s = std::sin(th);
  return {c * v.x - s * v.z, s * v.x + c * v.z};
}

/// Foot position relative to the base, in the body frame.
inline Vec2 foot_body(const RobotConfig& cfg, const RobotState& s, std::size_t leg) {
  const double hx = leg == 0 ? cfg.hip_offset : -cfg.hip_offset;
  const double qh = s.q[2 * leg], qk = s.q[2 * leg + 1];
  return {hx + cfg.thigh * std::sin(qh) + cfg.shank * std::sin(qh + qk),
          -cfg.thigh * std::cos(qh) - cfg.shank * std::cos(qh + qk)};
}

/// d foot_body / d (hip, knee).
inline std::array<Vec2, 2> foot_jacobian(const RobotConfig& cfg, const RobotState& s, std::size_t leg) {
  const double qh = s.q[2 * leg], qk = s.q[2 * leg + 1];
  const Vec2 dk{cfg.shank * std::cos(qh + qk), cfg.shank * std::sin(qh + qk)};
  const Vec2 dh = Vec2{cfg.thigh * std::cos(qh), cfg.thigh * std::sin(qh)} + dk;
  return {dh, dk};
}

inline Vec2 foot_world(const RobotConfig& cfg, const RobotState& s, std::size_t leg) {
  return Vec2{s.x, s.z} + rotate(s.pitch, foot_body(cfg, s, leg));
}

inline Vec2 foot_velocity(const RobotConfig& cfg, const RobotState& s, std::size_t leg) {
  const Vec2 r = rotate(s.pitch, foot_body(cfg, s, leg));
  const auto j = foot_jacobian(cfg, s, leg);
  const Vec2 rel = rotate(s.pitch, s.qd[2 * leg] * j[0] + s.qd[2 * leg + 1] * j[1]);
  return Vec2{s.vx, s.vz} + Vec2{-s.omega * r.z, s.omega * r.x} + rel;
}

/// Depth of the feet below the base at the given joint angles (level torso).
inline double stance_height(const RobotConfig& cfg, const JointVec& q) {
  RobotState s;
  s.q = q;
  return -std::min(foot_body(cfg, s, 0).z, foot_body(cfg, s, 1).z);
}

}  // namespace kin

struct Contact {
  bool active = false;
  Vec2 normal{0.0, 1.0};
  double depth = 0.0;
};

/// Penetration of a point into the heightfield. Side contact is chosen when
/// the point sits just inside a step edge and escaping sideways is shorter.
inline Contact probe_contact(const TerrainProfile& t, const RobotConfig& cfg, Vec2 p) {
  Contact c;
  if (!t.supported_at(p.x)) return c;
  const double vertical = t.height_at(p.x) - p.z;
  if (vertical <= 0.0) return c;
  c.active = true;
  c.depth = vertical;
  const std::size_t i = t.cell(p.x);
  auto free_cell = [&](std::size_t j) { return t.gap[j] != 0 || t.heights[j] <= p.z; };
  const int reach = static_cast<int>(std::ceil(cfg.wall_search / t.resolution));
  for (int k = 1; k <= reach; ++k) {
    if (i >= static_cast<std::size_t>(k) && free_cell(i - k)) {
      const double d = p.x - static_cast<double>(i - k + 1) * t.resolution;
      if (d < c.depth) c = {true, {-1.0, 0.0}, d};
      break;
    }
  }
  for (int k = 1; k <= reach; ++k) {
    if (i + k < t.heights.size() && free_cell(i + k)) {
      const double d = static_cast<double>(i + k) * t.resolution - p.x;
      if (d < c.depth) c = {true, {1.0, 0.0}, d};
      break;
    }
  }
  return c;
}

/// One physics substep with joint torques held fixed.
inline void integrate_substep(RobotState& s, const JointVec& tau, const TerrainProfile& t,
                              const RobotConfig& cfg) {
  const double dt = cfg.physics_dt;
  Vec2 force{0.0, 0.0};
  double torque = 0.0;
  JointVec gen = tau;

  for (std::size_t leg = 0; leg < kFootCount; ++leg) {
    const Vec2 p = kin::foot_world(cfg, s, leg);
    const Contact c = probe_contact(t, cfg, p);
    s.contact[leg] = c.active;
    if (!c.active) {
      s.anchored[leg] = false;
      continue;
    }
    const Vec2 v = kin::foot_velocity(cfg, s, leg);
    const Vec2 n = c.normal;
    const Vec2 tang{n.z, -n.x};
    const double fn = std::max(0.0, cfg.contact_stiffness * c.depth - cfg.contact_damping * dot(v, n));
    if (!s.anchored[leg]) {
      s.anchored[leg] = true;
      s.anchor[leg] = p;
    }
    const double stretch = dot(p - s.anchor[leg], tang);
    double ft = -cfg.tangential_stiffness * stretch - cfg.tangential_damping * dot(v, tang);
    const double limit = cfg.friction * fn;
    if (std::abs(ft) > limit) {
      ft = std::copysign(limit, ft);
      // Slip: drag the anchor so the spring alone carries the friction limit.
      s.anchor[leg] = p + (ft / cfg.tangential_stiffness) * tang;
    }
    const Vec2 f = fn * n + ft * tang;
    force = force + f;
    const Vec2 r = kin::rotate(s.pitch, kin::foot_body(cfg, s, leg));
    torque += r.x * f.z - r.z * f.x;
    const auto j = kin::foot_jacobian(cfg, s, leg);
    gen[2 * leg] += dot(kin::rotate(s.pitch, j[0]), f);
    gen[2 * leg + 1] += dot(kin::rotate(s.pitch, j[1]), f);
  }

  s.vx += dt * force.x / cfg.torso_mass;
  s.vz += dt * (force.z / cfg.torso_mass - cfg.gravity);
  s.omega += dt * torque / cfg.torso_inertia;
  for (std::size_t j = 0; j < kJointCount; ++j) s.qd[j] += dt * gen[j] / cfg.joint_inertia;

  // Gravity is integrated exactly; everything else is semi-implicit Euler.
  s.x += dt * s.vx;
  s.z += dt * s.vz + 0.5 * dt * dt * cfg.gravity;
  s.pitch += dt * s.omega;
  for (std::size_t j = 0; j < kJointCount; ++j) s.q[j] += dt * s.qd[j];
}

inline JointVec pd_torque(const RobotState& s, const JointVec& target, const RobotConfig& cfg) {
  JointVec tau{};
  for (std::size_t j = 0; j < kJointCount; ++j) tau[j] = cfg.kp * (target[j] - s.q[j]) - cfg.kd * s.qd[j];
  return tau;
}

/// One 50 Hz control step: PD torques are recomputed at every substep.
inline void control_step(RobotState& s, const JointVec& action, const TerrainProfile& t,
                         const RobotConfig& cfg) {
  JointVec target{};
  for (std::size_t j = 0; j < kJointCount; ++j) target[j] = cfg.nominal[j] + cfg.action_scale * action[j];
  for (int k = 0; k < cfg.substeps; ++k) integrate_substep(s, pd_torque(s, target, cfg), t, cfg);
  for (std::size_t leg = 0; leg < kFootCount; ++leg) {
    s.contact[leg] = probe_contact(t, cfg, kin::foot_world(cfg, s, leg)).active;
  }
  s.a_prev = action;
}

inline double mechanical_energy(const RobotState& s, const RobotConfig& cfg) {
  double e = 0.5 * cfg.torso_mass * (s.vx * s.vx + s.vz * s.vz) + cfg.torso_mass * cfg.gravity * s.z +
             0.5 * cfg.torso_inertia * s.omega * s.omega;
  for (double w : s.qd) e += 0.5 * cfg.joint_inertia * w * w;
  return e;
}

}  // namespace pkfr::env
