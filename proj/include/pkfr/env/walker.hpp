#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "pkfr/env/reference.hpp"
#include "pkfr/env/sensing.hpp"

namespace pkfr::env {

/// Proprioceptive observation: ω, projected gravity (2), command, q offsets
/// (4), q velocities (4), previous action (4).
inline constexpr std::size_t kObsDim = 16;
inline constexpr std::size_t kHistoryLength = 8;
using ObsVec = std::array<double, kObsDim>;

struct RewardWeights {
  double velocity = 1.0;
  double alive = 0.2;
  double termination = 10.0;
};

struct EnvConfig {
  RobotConfig robot;
  DepthConfig depth;
  ReferenceGait gait;
  RewardWeights reward;
  double command_min = 0.3;
  double command_max = 1.0;
  double start_x = 0.5;
  double reset_perturbation = 0.05;  // uniform joint-angle noise (rad)
  double fall_height = 0.25;          // base clearance above the surface under it
  double fall_pitch = 0.8;
  int episode_cap = 600;
};

enum class Termination { kNone, kFall, kOutOfBounds, kTimeout, kSuccess };

inline std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::kNone: return "none";
    case Termination::kFall: return "fall";
    case Termination::kOutOfBounds: return "out_of_bounds";
    case Termination::kTimeout: return "timeout";
    case Termination::kSuccess: return "success";
  }
  return "none";
}

struct RewardTerms {
  double velocity = 0.0;
  double alive = 0.0;
  double termination = 0.0;
  double total() const { return velocity + alive - termination; }
};

struct StepResult {
  ObsVec obs{};
  AmpVec amp{};
  std::vector<double> scan;
  RewardTerms reward;
  bool terminated = false;
  Termination reason = Termination::kNone;
};

inline ObsVec assemble_observation(const RobotState& s, double command, const RobotConfig& cfg) {
  ObsVec o{};
  o[0] = s.omega;
  o[1] = -std::sin(s.pitch);
  o[2] = -std::cos(s.pitch);
  o[3] = command;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    o[4 + j] = s.q[j] - cfg.nominal[j];
    o[8 + j] = s.qd[j];
    o[12 + j] = s.a_prev[j];
  }
  return o;
}

inline AmpVec assemble_amp_state(const RobotState& s, const RobotConfig& cfg) {
  AmpVec a{};
  a[0] = -std::sin(s.pitch);
  a[1] = -std::cos(s.pitch);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    a[2 + j] = s.q[j] - cfg.nominal[j];
    a[6 + j] = s.qd[j];
  }
  a[10] = s.body_forward_velocity();
  a[11] = s.omega;
  return a;
}

inline bool state_finite(const RobotState& s) {
  bool ok = std::isfinite(s.x) && std::isfinite(s.z) && std::isfinite(s.pitch) && std::isfinite(s.vx) &&
            std::isfinite(s.vz) && std::isfinite(s.omega);
  for (std::size_t j = 0; j < kJointCount; ++j) ok = ok && std::isfinite(s.q[j]) && std::isfinite(s.qd[j]);
  return ok;
}

/// One episode-managed environment instance. Not thread-safe; distinct
/// instances share nothing.
class Walker {
 public:
  Walker(EnvConfig cfg, TerrainProfile profile) : cfg_(std::move(cfg)), profile_(std::move(profile)) {}

  StepResult reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    state_ = RobotState{};
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const double noise = cfg_.reset_perturbation * (2.0 * u01(rng) - 1.0);
      state_.q[j] = cfg_.robot.nominal[j] + noise;
    }
    state_.x = cfg_.start_x;
    state_.z = profile_.height_at(cfg_.start_x) + kin::stance_height(cfg_.robot, state_.q);
    command_ = cfg_.command_min + (cfg_.command_max - cfg_.command_min) * u01(rng);
    ref_phase_ = u01(rng);
    steps_ = 0;
    done_ = false;
    StepResult r = observe();
    history_.assign(kHistoryLength, ObsVec{});
    history_.back() = r.obs;
    // Motion-prior history is padded with the initial state rather than zeros
    // so early sequences stay on the physical manifold.
    amp_history_.assign(kHistoryLength, r.amp);
    scan_ = r.scan;
    return r;
  }

  StepResult step(std::span<const double> action) {
    if (action.size() != kJointCount) {
      throw ShapeError("step: action has length " + std::to_string(action.size()) + ", expected " +
                       std::to_string(kJointCount));
    }
    if (done_) throw ContractError("step: episode already terminated; call reset");
    JointVec a{};
    for (std::size_t j = 0; j < kJointCount; ++j) {
      if (!std::isfinite(action[j])) throw ContractError("step: non-finite action");
      a[j] = std::clamp(action[j], -cfg_.robot.action_clip, cfg_.robot.action_clip);
    }
    control_step(state_, a, profile_, cfg_.robot);
    ++steps_;
    ref_phase_ += cfg_.robot.control_dt() / cfg_.gait.period;
    ref_phase_ -= std::floor(ref_phase_);

    StepResult r;
    if (!state_finite(state_)) {
      r.terminated = true;
      r.reason = Termination::kFall;
      r.scan.assign(cfg_.depth.rays, cfg_.depth.d_max);
      r.reward.termination = cfg_.reward.termination;
      done_ = true;
      return r;
    }
    r = observe();
    const double clearance = state_.z - profile_.height_at(state_.x);
    if (clearance < cfg_.fall_height || std::abs(state_.pitch) > cfg_.fall_pitch) {
      r.reason = Termination::kFall;
    } else if (state_.x >= profile_.goal_x) {
      r.reason = Termination::kSuccess;
    } else if (state_.x < 0.0 || state_.x > profile_.length()) {
      r.reason = Termination::kOutOfBounds;
    } else if (steps_ >= cfg_.episode_cap) {
      r.reason = Termination::kTimeout;
    }
    r.terminated = r.reason != Termination::kNone;
    const double err = state_.vx - command_;
    r.reward.velocity = cfg_.reward.velocity * std::exp(-err * err / 0.25);
    r.reward.alive = cfg_.reward.alive;
    r.reward.termination = r.reason == Termination::kFall ? cfg_.reward.termination : 0.0;
    done_ = r.terminated;
    push(r);
    scan_ = r.scan;
    return r;
  }

  /// Oldest-first proprioceptive history, zero-padded after reset.
  const std::vector<ObsVec>& history() const { return history_; }
  const std::vector<AmpVec>& amp_history() const { return amp_history_; }
  /// Depth scan from the most recent reset or step.
  const std::vector<double>& last_scan() const { return scan_; }

  const RobotState& state() const { return state_; }
  RobotState& mutable_state() { return state_; }
  const TerrainProfile& profile() const { return profile_; }
  const EnvConfig& config() const { return cfg_; }
  double command() const { return command_; }
  double reference_phase() const { return ref_phase_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }

  StepResult observe() const {
    StepResult r;
    r.obs = assemble_observation(state_, command_, cfg_.robot);
    r.amp = assemble_amp_state(state_, cfg_.robot);
    r.scan = depth_scan(state_, profile_, cfg_.depth);
    return r;
  }

 private:
  void push(const StepResult& r) {
    std::rotate(history_.begin(), history_.begin() + 1, history_.end());
    history_.back() = r.obs;
    std::rotate(amp_history_.begin(), amp_history_.begin() + 1, amp_history_.end());
    amp_history_.back() = r.amp;
  }

  EnvConfig cfg_;
  TerrainProfile profile_;
  RobotState state_;
  double command_ = 0.0;
  double ref_phase_ = 0.0;
  int steps_ = 0;
  bool done_ = false;
  std::vector<ObsVec> history_;
  std::vector<AmpVec> amp_history_;
  std::vector<double> scan_;
};

/// Action that makes the PD targets follow the scripted gait.
inline JointVec reference_action(double phase, const EnvConfig& cfg) {
  const JointVec off = cfg.gait.offsets(phase);
  JointVec a{};
  for (std::size_t j = 0; j < kJointCount; ++j) a[j] = off[j] / cfg.robot.action_scale;
  return a;
}

}  // namespace pkfr::env
