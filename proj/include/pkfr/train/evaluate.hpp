#pragma once

#include <array>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pkfr/train/rollout.hpp"
#include "pkfr/train/trainer.hpp"

namespace pkfr::train {

/// Episodes ending at least this close to the goal count as "near".
inline constexpr double kTargetNearDistance = 0.5;

struct FamilyMetrics {
  env::TerrainFamily family{};
  std::size_t episodes = 0;
  double success = 0.0;      // fraction reaching goal_x without falling
  double target_near = 0.0;  // fraction ending within kTargetNearDistance of goal_x
  double tracking = 0.0;     // episode mean of exp(-(v_x - v_c)^2 / 0.25), averaged over episodes
};

struct MetricsTable {
  std::vector<FamilyMetrics> rows;
  std::vector<std::uint64_t> env_seeds;  // terrain and reset seeds in evaluation order

  const FamilyMetrics* find(env::TerrainFamily f) const {
    for (const auto& r : rows)
      if (r.family == f) return &r;
    return nullptr;
  }
};

/// Maps the live walkers of a batch to their next actions.
using EvalPolicy = std::function<std::vector<env::JointVec>(const std::vector<const env::Walker*>&)>;

/// Runs `episodes` episodes per family to termination (the env's episode cap
/// bounds their length). Seeds depend only on `seed`, family and episode index.
inline MetricsTable evaluate_policy(const EvalPolicy& policy, const env::EnvConfig& env_cfg,
                                    const std::vector<env::TerrainFamily>& families, double difficulty,
                                    std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw ContractError("evaluate_metrics: episodes must be positive");
  if (families.empty()) throw ContractError("evaluate_metrics: no terrain families given");
  MetricsTable table;
  for (auto fam : families) {
    std::vector<env::Walker> ws;
    std::vector<double> track_sum(episodes, 0.0);
    std::vector<int> track_n(episodes, 0);
    for (std::size_t e = 0; e < episodes; ++e) {
      const std::uint64_t terrain_seed = seed * 7919 + static_cast<std::uint64_t>(fam) * 1000 + e;
      const std::uint64_t reset_seed = terrain_seed ^ 0xA5A5A5A5ULL;
      table.env_seeds.push_back(terrain_seed);
      table.env_seeds.push_back(reset_seed);
      ws.emplace_back(env_cfg, env::generate_terrain(fam, difficulty, terrain_seed));
      ws.back().reset(reset_seed);
    }
    std::vector<env::Termination> reason(episodes, env::Termination::kNone);
    std::vector<double> final_x(episodes, 0.0);
    for (;;) {
      std::vector<std::size_t> live;
      std::vector<const env::Walker*> ptrs;
      for (std::size_t e = 0; e < episodes; ++e) {
        if (!ws[e].done()) {
          live.push_back(e);
          ptrs.push_back(&ws[e]);
        }
      }
      if (live.empty()) break;
      const auto actions = policy(ptrs);
      if (actions.size() != live.size()) throw ShapeError("evaluate_metrics: policy returned the wrong batch size");
      for (std::size_t k = 0; k < live.size(); ++k) {
        auto& w = ws[live[k]];
        const auto r = w.step(actions[k]);
        const double err = w.state().vx - w.command();
        track_sum[live[k]] += std::isfinite(err) ? std::exp(-err * err / 0.25) : 0.0;
        ++track_n[live[k]];
        if (r.terminated) {
          reason[live[k]] = r.reason;
          final_x[live[k]] = w.state().x;
        }
      }
    }
    FamilyMetrics m;
    m.family = fam;
    m.episodes = episodes;
    for (std::size_t e = 0; e < episodes; ++e) {
      const double goal = ws[e].profile().goal_x;
      m.success += reason[e] == env::Termination::kSuccess ? 1.0 : 0.0;
      m.target_near += std::isfinite(final_x[e]) && final_x[e] >= goal - kTargetNearDistance ? 1.0 : 0.0;
      m.tracking += track_n[e] ? track_sum[e] / track_n[e] : 0.0;
    }
    const double n = static_cast<double>(episodes);
    m.success /= n;
    m.target_near /= n;
    m.tracking /= n;
    table.rows.push_back(m);
  }
  return table;
}

/// Deterministic policy: the action mean of the model.
template <std::floating_point T>
EvalPolicy mean_action_policy(const policy::ActorCritic<T>& model) {
  return [&model](const std::vector<const env::Walker*>& ws) {
    const auto in = gather_inputs<T>(ws, model.cfg);
    const auto mean = model.actor(num::constant(in.history), num::constant(in.scan)).mean.value();
    std::vector<env::JointVec> out(ws.size());
    const std::size_t a = model.cfg.action_dim;
    for (std::size_t i = 0; i < ws.size(); ++i)
      for (std::size_t j = 0; j < a; ++j) out[i][j] = static_cast<double>(mean[i * a + j]);
    return out;
  };
}

template <std::floating_point T>
MetricsTable evaluate_metrics(const policy::ActorCritic<T>& model, const env::EnvConfig& env_cfg,
                              const std::vector<env::TerrainFamily>& families, double difficulty,
                              std::size_t episodes, std::uint64_t seed) {
  return evaluate_policy(mean_action_policy(model), env_cfg, families, difficulty, episodes, seed);
}

enum class Metric { kSuccess, kTargetNear, kTracking };

inline double metric_of(const FamilyMetrics& m, Metric k) {
  switch (k) {
    case Metric::kSuccess: return m.success;
    case Metric::kTargetNear: return m.target_near;
    case Metric::kTracking: return m.tracking;
  }
  return 0.0;
}

inline void write_eval_header(std::ostream& os) {
  os << "model";
  for (auto f : env::kAllFamilies) os << ',' << env::family_name(f);
  os << ",Mean\n";
}

/// One CSV row in the fixed family order. Families that were not evaluated
/// are left blank; Mean averages the evaluated ones.
inline void write_eval_row(std::ostream& os, const std::string& name, const MetricsTable& t, Metric k) {
  os << name;
  double sum = 0.0;
  std::size_t n = 0;
  for (auto f : env::kAllFamilies) {
    os << ',';
    if (const auto* m = t.find(f)) {
      const double v = metric_of(*m, k);
      os << format_number(v);
      sum += v;
      ++n;
    }
  }
  os << ',' << (n ? format_number(sum / static_cast<double>(n)) : std::string()) << '\n';
}

}  // namespace pkfr::train
