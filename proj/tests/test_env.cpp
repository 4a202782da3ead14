#include <gtest/gtest.h>

#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "pkfr/env/walker.hpp"

using namespace pkfr::env;
using pkfr::ContractError;

namespace {

TerrainProfile flat_profile(double height = 0.0) {
  TerrainProfile t = generate_terrain(TerrainFamily::kRoughGround, 0.0, 0);
  for (auto& h : t.heights) h = height;
  return t;
}

EnvConfig quiet_config() {
  EnvConfig cfg;
  cfg.reset_perturbation = 0.0;
  return cfg;
}

bool same_result(const StepResult& a, const StepResult& b) {
  return a.obs == b.obs && a.amp == b.amp && a.scan == b.scan && a.reward.total() == b.reward.total() &&
         a.terminated == b.terminated && a.reason == b.reason;
}

}  // namespace

TEST(Terrain, RoughGroundAtZeroDifficultyIsFlat) {
  const auto t = generate_terrain(TerrainFamily::kRoughGround, 0.0, 17);
  for (double h : t.heights) EXPECT_EQ(h, 0.0);
  for (auto g : t.gap) EXPECT_EQ(g, 0);
}

TEST(Terrain, UpStairsMatchesClosedFormPerCell) {
  const double difficulty = 0.75;
  const auto t = generate_terrain(TerrainFamily::kUpStairs, difficulty, 3);
  const double h = difficulty * kStairRise, w = kStairTread;
  const double x0 = TerrainLayout::kFeatureStart;
  const double x1 = x0 + w * static_cast<double>(kStairCount);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < t.heights.size(); ++i) {
    const double x = t.cell_center(i);
    if (x < x0 || x >= x1) continue;
    EXPECT_NEAR(t.heights[i], h * std::floor((x - x0) / w), 1e-12) << "cell " << i;
    ++checked;
  }
  EXPECT_EQ(checked, kStairCount * 6);
}

TEST(Terrain, DownStairsAndLedgesHaveExpectedSigns) {
  const auto down = generate_terrain(TerrainFamily::kDownStairs, 1.0, 0);
  EXPECT_LT(down.heights.back(), 0.0);
  const auto up = generate_terrain(TerrainFamily::kClimbUp, 1.0, 0);
  EXPECT_NEAR(up.height_at(4.0) - up.height_at(2.0), kLedgeHeight, 1e-12);
  const auto drop = generate_terrain(TerrainFamily::kClimbDown, 1.0, 0);
  EXPECT_NEAR(drop.height_at(4.0) - drop.height_at(2.0), -kLedgeHeight, 1e-12);
}

TEST(Terrain, SlopeHasConstantGradient) {
  const auto t = generate_terrain(TerrainFamily::kClimbSlope, 0.5, 0);
  const double grade = std::tan(0.5 * kSlopeMaxDeg * M_PI / 180.0);
  for (std::size_t i = t.cell(2.0); i < t.cell(5.0); ++i) {
    EXPECT_NEAR(t.heights[i + 1] - t.heights[i], grade * t.resolution, 1e-12);
  }
}

TEST(Terrain, GapWidthScalesWithDifficulty) {
  auto count = [](const TerrainProfile& t) {
    std::size_t n = 0;
    for (auto g : t.gap) n += g;
    return n;
  };
  EXPECT_EQ(count(generate_terrain(TerrainFamily::kGapsCrossing, 0.0, 5)), 0u);
  const auto half = count(generate_terrain(TerrainFamily::kGapsCrossing, 0.5, 5));
  const auto full = count(generate_terrain(TerrainFamily::kGapsCrossing, 1.0, 5));
  EXPECT_GT(half, 0u);
  EXPECT_GT(full, half);
}

TEST(Terrain, GenerationIsDeterministic) {
  for (auto f : kAllFamilies) {
    const auto a = generate_terrain(f, 0.6, 42);
    const auto b = generate_terrain(f, 0.6, 42);
    EXPECT_EQ(a.heights, b.heights) << family_name(f);
    EXPECT_EQ(a.gap, b.gap) << family_name(f);
    for (double h : a.heights) EXPECT_TRUE(std::isfinite(h));
    EXPECT_DOUBLE_EQ(a.goal_x, TerrainLayout::kGoalX);
  }
}

TEST(Terrain, RejectsBadArguments) {
  EXPECT_THROW(generate_terrain(TerrainFamily::kBoxes, 1.5, 0), ContractError);
  EXPECT_THROW(generate_terrain(TerrainFamily::kBoxes, -0.1, 0), ContractError);
  EXPECT_THROW(generate_terrain(static_cast<TerrainFamily>(42), 0.5, 0), ContractError);
  EXPECT_FALSE(parse_family("Lava").has_value());
  EXPECT_EQ(parse_family("UpStairs"), TerrainFamily::kUpStairs);
}

TEST(Terrain, ExportRoundTripsHeightsExactly) {
  const auto t = generate_terrain(TerrainFamily::kGapsCrossing, 0.8, 9);
  std::ostringstream os;
  export_terrain(t, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "GapsCrossing 0.8 9 0.05");
  std::size_t i = 0;
  while (std::getline(is, line)) {
    ASSERT_LT(i, t.heights.size());
    if (line == "GAP") {
      EXPECT_EQ(t.gap[i], 1);
    } else {
      double v = 0.0;
      std::from_chars(line.data(), line.data() + line.size(), v);
      EXPECT_EQ(v, t.heights[i]);
      EXPECT_EQ(t.gap[i], 0);
    }
    ++i;
  }
  EXPECT_EQ(i, t.heights.size());
}

TEST(Reset, ZeroPerturbationGivesNominalPose) {
  Walker w(quiet_config(), flat_profile());
  w.reset(123);
  EXPECT_EQ(w.state().q, w.config().robot.nominal);
}

TEST(Reset, HistoryIsZeroPaddedWithInitialObservationLast) {
  Walker w(EnvConfig{}, flat_profile());
  const auto r = w.reset(4);
  ASSERT_EQ(w.history().size(), kHistoryLength);
  for (std::size_t k = 0; k + 1 < kHistoryLength; ++k) EXPECT_EQ(w.history()[k], ObsVec{});
  EXPECT_EQ(w.history().back(), r.obs);
}

TEST(Reset, EqualSeedsGiveIdenticalStates) {
  Walker a(EnvConfig{}, flat_profile()), b(EnvConfig{}, flat_profile());
  const auto ra = a.reset(77), rb = b.reset(77);
  EXPECT_TRUE(same_result(ra, rb));
  EXPECT_EQ(a.state().q, b.state().q);
  EXPECT_EQ(a.command(), b.command());
  EXPECT_EQ(a.reference_phase(), b.reference_phase());
  EXPECT_GE(a.command(), 0.3);
  EXPECT_LE(a.command(), 1.0);
}

TEST(Step, ZeroActionStandsOnFlatGround) {
  Walker w(quiet_config(), flat_profile());
  w.reset(0);
  const double z0 = w.state().z;
  const JointVec zero{};
  for (int i = 0; i < 50; ++i) {
    const auto r = w.step(zero);
    ASSERT_FALSE(r.terminated);
    EXPECT_LT(std::abs(w.state().z - z0), 0.05) << "step " << i;
  }
}

TEST(Step, UnsupportedBaseFallsAtGravity) {
  auto t = flat_profile();
  std::fill(t.gap.begin(), t.gap.end(), 1);
  EnvConfig cfg = quiet_config();
  cfg.fall_height = -1e9;
  Walker w(cfg, t);
  w.reset(0);
  const double vz0 = w.state().vz;
  w.step(JointVec{});
  const double accel = (w.state().vz - vz0) / cfg.robot.control_dt();
  EXPECT_NEAR(accel, -cfg.robot.gravity, 1e-9);
  EXPECT_FALSE(w.state().contact[0] || w.state().contact[1]);
}

TEST(Step, CrossingGoalTerminatesWithSuccess) {
  Walker w(quiet_config(), flat_profile());
  w.reset(0);
  w.mutable_state().x = w.profile().goal_x - 0.001;
  w.mutable_state().vx = 1.0;
  const auto r = w.step(JointVec{});
  EXPECT_TRUE(r.terminated);
  EXPECT_EQ(r.reason, Termination::kSuccess);
}

TEST(Step, TimeoutAndFallReasons) {
  EnvConfig cfg = quiet_config();
  cfg.episode_cap = 3;
  Walker w(cfg, flat_profile());
  w.reset(0);
  StepResult r;
  for (int i = 0; i < 3; ++i) r = w.step(JointVec{});
  EXPECT_EQ(r.reason, Termination::kTimeout);

  Walker f(quiet_config(), flat_profile());
  f.reset(0);
  f.mutable_state().pitch = 1.0;
  r = f.step(JointVec{});
  EXPECT_EQ(r.reason, Termination::kFall);
  EXPECT_DOUBLE_EQ(r.reward.termination, 10.0);
}

TEST(Step, RejectsNonFiniteAndWrongLengthActions) {
  Walker w(quiet_config(), flat_profile());
  w.reset(0);
  const JointVec bad{0.0, std::nan(""), 0.0, 0.0};
  EXPECT_THROW(w.step(bad), ContractError);
  const std::vector<double> short_action(3, 0.0);
  EXPECT_THROW(w.step(short_action), pkfr::ShapeError);
}

TEST(Step, ContactFlagsMatchFootHeights) {
  Walker w(EnvConfig{}, generate_terrain(TerrainFamily::kRoughGround, 1.0, 2));
  w.reset(1);
  double phase = 0.0;
  for (int i = 0; i < 100 && !w.done(); ++i) {
    w.step(reference_action(phase, w.config()));
    phase += 0.08;
    const auto& s = w.state();
    for (std::size_t leg = 0; leg < kFootCount; ++leg) {
      const Vec2 p = kin::foot_world(w.config().robot, s, leg);
      const bool below = w.profile().supported_at(p.x) && p.z < w.profile().height_at(p.x);
      EXPECT_EQ(s.contact[leg], below);
    }
  }
}

TEST(Step, DeterministicUnderEqualInputs) {
  const auto t = generate_terrain(TerrainFamily::kBoxes, 0.7, 8);
  Walker a(EnvConfig{}, t), b(EnvConfig{}, t);
  a.reset(5);
  b.reset(5);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.7);
  for (int i = 0; i < 120 && !a.done(); ++i) {
    JointVec act{};
    for (auto& x : act) x = n(rng);
    ASSERT_TRUE(same_result(a.step(act), b.step(act)));
  }
}

TEST(Step, OnlyTrailingEntriesDependOnPreviousAction) {
  Walker w(EnvConfig{}, flat_profile());
  w.reset(3);
  w.step(JointVec{0.2, -0.1, 0.3, 0.0});
  auto s = w.state();
  const auto base = assemble_observation(s, 0.5, w.config().robot);
  s.a_prev = {1.0, 2.0, 3.0, 4.0};
  const auto changed = assemble_observation(s, 0.5, w.config().robot);
  for (std::size_t i = 0; i < kObsDim; ++i) {
    if (i < kObsDim - kJointCount) {
      EXPECT_EQ(base[i], changed[i]) << i;
    } else {
      EXPECT_NE(base[i], changed[i]) << i;
    }
  }
}

TEST(Step, FreeFlightConservesEnergy) {
  EnvConfig cfg = quiet_config();
  cfg.robot.kp = 0.0;
  cfg.robot.kd = 0.0;
  cfg.fall_height = -1e9;
  cfg.fall_pitch = 1e9;
  Walker w(cfg, flat_profile(-1000.0));
  w.reset(0);
  auto& s = w.mutable_state();
  s.z = 50.0;
  s.vx = 0.7;
  s.vz = 2.0;
  s.omega = 1.3;
  s.qd = {0.5, -1.2, 2.0, 0.3};
  const double e0 = mechanical_energy(s, cfg.robot);
  for (int i = 0; i < 50; ++i) w.step(JointVec{});  // one simulated second
  const double e1 = mechanical_energy(w.state(), cfg.robot);
  EXPECT_LT(std::abs(e1 - e0) / std::abs(e0), 0.01);
}

TEST(Depth, FlatGroundMatchesRayPlaneIntersection) {
  const auto t = flat_profile();
  RobotState s;
  s.x = 1.0;
  for (double h : {0.3, 0.5, 1.2}) {
    s.z = h;
    DepthConfig cfg;
    const auto scan = depth_scan(s, t, cfg);
    ASSERT_EQ(scan.size(), 32u);
    for (std::size_t k = 0; k < scan.size(); ++k) {
      const double expect = std::min(h / std::sin(cfg.angle(k)), cfg.d_max);
      EXPECT_NEAR(scan[k], expect, 1e-9) << "h=" << h << " ray " << k;
    }
  }
}

TEST(Depth, RaysNeverExceedMaximum) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(0.0, 10.0), uz(-0.5, 3.0), up(-0.8, 0.8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = generate_terrain(kAllFamilies[trial % 9], 1.0, trial);
    RobotState s;
    s.x = ux(rng);
    s.z = uz(rng);
    s.pitch = up(rng);
    for (double d : depth_scan(s, t, DepthConfig{})) {
      EXPECT_LE(d, 5.0);
      EXPECT_GE(d, 0.0);
    }
  }
}

TEST(Depth, WallAheadShortensForwardRays) {
  auto t = flat_profile();
  RobotState s;
  s.x = 1.0;
  s.z = 0.5;
  const auto open = depth_scan(s, t, DepthConfig{});
  for (std::size_t i = t.cell(1.5); i < t.heights.size(); ++i) t.heights[i] = 2.0;
  const auto walled = depth_scan(s, t, DepthConfig{});
  for (std::size_t k = 0; k < 4; ++k) EXPECT_LT(walled[k], open[k]) << "ray " << k;
}

TEST(Reference, IsPeriodicWithConsistentVelocities) {
  const ReferenceGait g;
  for (double phi : {0.0, 0.13, 0.5, 0.77}) {
    const auto a = reference_motion(phi, g), b = reference_motion(phi + 1.0, g);
    for (std::size_t i = 0; i < kAmpDim; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    const double h = 1e-5;
    const auto lo = reference_motion(phi - h, g), hi = reference_motion(phi + h, g);
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const double fd = (hi[2 + j] - lo[2 + j]) / (2.0 * h) / g.period;
      EXPECT_NEAR(a[6 + j], fd, 1e-3) << "joint " << j << " phase " << phi;
    }
  }
  EXPECT_EQ(reference_motion(0.3).size(), 12u);
}

TEST(Reference, OpenLoopGaitTraversesEveryFamilyAtZeroDifficulty) {
  const EnvConfig cfg;
  for (auto f : kAllFamilies) {
    Walker w(cfg, generate_terrain(f, 0.0, 1));
    w.reset(11);
    double phase = w.reference_phase();
    while (!w.done()) {
      w.step(reference_action(phase, cfg));
      phase += cfg.robot.control_dt() / cfg.gait.period;
    }
    EXPECT_GE(w.state().x - cfg.start_x, 2.0) << family_name(f);
  }
}
