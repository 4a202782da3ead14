#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "pkfr/policy/model.hpp"
#include "pkfr/train/config.hpp"

namespace pkfr::train {

using num::Array;
using num::Var;

/// Flat per-sample storage, row i = step * envs + env.
struct RolloutBuffer {
  std::size_t envs = 0, steps = 0;
  std::size_t obs_dim = 0, rays = 0, amp_dim = 0, action_dim = 0, priv_dim = 0;
  bool has_future = false;

  std::vector<double> history;      // [N, 8, obs]
  std::vector<double> scan;         // [N, rays]
  std::vector<double> priv;         // [N, priv]
  std::vector<double> amp_history;  // [N, 8, amp], newest row is s_t
  std::vector<double> action;       // [N, act]
  std::vector<double> log_prob, value, task_reward, amp_reward;
  std::vector<std::uint8_t> done;
  std::vector<double> predicted;    // [N, 2, amp] as emitted (zeros without a forecast head)
  std::vector<double> target;       // [N, 2, amp]
  std::vector<std::uint8_t> mask;   // [N, 2]
  std::vector<double> advantage_raw, advantage, returns;
  std::vector<double> bootstrap;    // [envs] value after the last step

  std::size_t episodes_ended = 0;
  std::size_t successes = 0;

  std::size_t size() const { return envs * steps; }
  std::size_t index(std::size_t t, std::size_t e) const { return t * envs + e; }
  std::size_t amp_row() const { return env::kHistoryLength * amp_dim; }

  /// s_t, the newest motion state of sample i.
  const double* amp_state(std::size_t i) const {
    return amp_history.data() + i * amp_row() + (env::kHistoryLength - 1) * amp_dim;
  }

  void allocate(std::size_t n_envs, std::size_t n_steps, const policy::PolicyConfig& cfg) {
    envs = n_envs;
    steps = n_steps;
    obs_dim = cfg.obs_dim;
    rays = cfg.rays;
    amp_dim = cfg.amp_dim;
    action_dim = cfg.action_dim;
    priv_dim = cfg.privileged_dim();
    has_future = cfg.has_future_head();
    const std::size_t n = size();
    history.assign(n * cfg.history * obs_dim, 0.0);
    scan.assign(n * rays, 0.0);
    priv.assign(n * priv_dim, 0.0);
    amp_history.assign(n * cfg.history * amp_dim, 0.0);
    action.assign(n * action_dim, 0.0);
    log_prob.assign(n, 0.0);
    value.assign(n, 0.0);
    task_reward.assign(n, 0.0);
    amp_reward.assign(n, 0.0);
    done.assign(n, 0);
    predicted.assign(n * 2 * amp_dim, 0.0);
    target.assign(n * 2 * amp_dim, 0.0);
    mask.assign(n * 2, 0);
    advantage_raw.assign(n, 0.0);
    advantage.assign(n, 0.0);
    returns.assign(n, 0.0);
    bootstrap.assign(envs, 0.0);
    episodes_ended = successes = 0;
  }
};

/// Independent walkers on per-env terrain, with seeded episode resets.
class EnvPool {
 public:
  explicit EnvPool(const TrainConfig& cfg) : reset_rng_(cfg.seed * 0x9E3779B97F4A7C15ULL + 17) {
    for (std::size_t e = 0; e < cfg.envs; ++e) {
      walkers_.emplace_back(cfg.env, env::generate_terrain(cfg.family, cfg.difficulty, cfg.seed * 1000 + e));
      walkers_.back().reset(reset_rng_());
    }
  }

  std::vector<env::Walker>& walkers() { return walkers_; }
  std::uint64_t next_seed() { return reset_rng_(); }

 private:
  std::mt19937_64 reset_rng_;
  std::vector<env::Walker> walkers_;
};

/// Batched network inputs gathered from a set of walkers.
template <std::floating_point T>
struct PolicyInputs {
  Array<T> history;      // [B, 8, obs]
  Array<T> scan;         // [B, rays]
  Array<T> priv;         // [B, priv]
  Array<T> amp_history;  // [B, 8, amp]
};

template <std::floating_point T>
PolicyInputs<T> gather_inputs(const std::vector<const env::Walker*>& ws, const policy::PolicyConfig& cfg) {
  const std::size_t b = ws.size(), h = cfg.history;
  PolicyInputs<T> in{Array<T>({b, h, cfg.obs_dim}), Array<T>({b, cfg.rays}), Array<T>({b, cfg.privileged_dim()}),
                     Array<T>({b, h, cfg.amp_dim})};
  for (std::size_t i = 0; i < b; ++i) {
    const auto& w = *ws[i];
    const auto& hist = w.history();
    const auto& amp_hist = w.amp_history();
    if (hist.size() != h || hist.front().size() != cfg.obs_dim || amp_hist.front().size() != cfg.amp_dim) {
      throw ShapeError("gather_inputs: walker dimensions do not match the policy config");
    }
    for (std::size_t k = 0; k < h; ++k) {
      for (std::size_t j = 0; j < cfg.obs_dim; ++j) in.history[(i * h + k) * cfg.obs_dim + j] = static_cast<T>(hist[k][j]);
      for (std::size_t j = 0; j < cfg.amp_dim; ++j)
        in.amp_history[(i * h + k) * cfg.amp_dim + j] = static_cast<T>(amp_hist[k][j]);
    }
    const auto& scan = w.last_scan();
    if (scan.size() != cfg.rays) throw ShapeError("gather_inputs: scan length does not match the policy config");
    for (std::size_t j = 0; j < cfg.rays; ++j) in.scan[i * cfg.rays + j] = static_cast<T>(scan[j]);
    std::size_t c = 0;
    T* p = in.priv.data().data() + i * cfg.privileged_dim();
    for (std::size_t j = 0; j < cfg.obs_dim; ++j) p[c++] = static_cast<T>(hist.back()[j]);
    p[c++] = static_cast<T>(w.state().vx);
    if (cfg.critic_sees_scan)
      for (std::size_t j = 0; j < cfg.rays; ++j) p[c++] = static_cast<T>(scan[j]);
  }
  return in;
}

/// Discriminator input for the policy side: real history plus the forecast
/// when the model has one, otherwise the history alone.
template <std::floating_point T>
Var<T> policy_sequence(const Var<T>& amp_history, const Var<T>& future) {
  return future.defined() ? amp::assemble_policy_sequence(amp_history, future) : amp_history;
}

inline std::vector<const env::Walker*> pointers(const std::vector<env::Walker>& ws) {
  std::vector<const env::Walker*> out;
  for (const auto& w : ws) out.push_back(&w);
  return out;
}

/// Steps every env `steps` times with sampled actions. Rewards combine the task
/// terms with the style reward of the sequence the policy emitted at t.
template <std::floating_point T>
RolloutBuffer collect_rollout(EnvPool& pool, const policy::ActorCritic<T>& model,
                              const amp::DiscriminatorSet<T>& discs, std::size_t steps, std::mt19937_64& rng) {
  const auto& cfg = model.cfg;
  auto& walkers = pool.walkers();
  RolloutBuffer buf;
  buf.allocate(walkers.size(), steps, cfg);
  const std::size_t E = walkers.size(), A = cfg.action_dim, amp2 = 2 * cfg.amp_dim;

  for (std::size_t t = 0; t < steps; ++t) {
    const auto in = gather_inputs<T>(pointers(walkers), cfg);
    const auto out = model.actor(num::constant(in.history), num::constant(in.scan));
    const auto v = model.value(num::constant(in.priv)).value();
    for (T x : v.storage())
      if (!std::isfinite(static_cast<double>(x))) throw NumericError("non-finite value estimate during rollout");
    const Array<T> act = policy::gaussian_sample(out.mean.value(), out.log_std.value(), rng);
    for (T x : act.storage())
      if (!std::isfinite(static_cast<double>(x))) throw NumericError("non-finite action during rollout");
    const auto lp = policy::gaussian_log_prob(num::constant(act), num::constant(out.mean.value()),
                                              num::constant(out.log_std.value()))
                        .value();
    const auto amp_hist = num::constant(in.amp_history);
    const auto style = discs.reward(
        policy_sequence(amp_hist, out.future.defined() ? num::constant(out.future.value()) : Var<T>{}));

    for (std::size_t e = 0; e < E; ++e) {
      const std::size_t i = buf.index(t, e);
      auto copy = [&](std::vector<double>& dst, const Array<T>& src, std::size_t width) {
        for (std::size_t j = 0; j < width; ++j) dst[i * width + j] = static_cast<double>(src[e * width + j]);
      };
      copy(buf.history, in.history, cfg.history * cfg.obs_dim);
      copy(buf.scan, in.scan, cfg.rays);
      copy(buf.priv, in.priv, buf.priv_dim);
      copy(buf.amp_history, in.amp_history, cfg.history * cfg.amp_dim);
      copy(buf.action, act, A);
      if (out.future.defined()) copy(buf.predicted, out.future.value(), amp2);
      buf.log_prob[i] = static_cast<double>(lp[e]);
      buf.value[i] = static_cast<double>(v[e]);
      buf.amp_reward[i] = style[e];

      std::array<double, env::kJointCount> a{};
      for (std::size_t j = 0; j < A; ++j) a[j] = static_cast<double>(act[e * A + j]);
      const auto r = walkers[e].step(a);
      buf.task_reward[i] = r.reward.total();
      if (r.terminated) {
        buf.done[i] = 1;
        ++buf.episodes_ended;
        if (r.reason == env::Termination::kSuccess) ++buf.successes;
        walkers[e].reset(pool.next_seed());
      }
    }
  }
  const auto last = gather_inputs<T>(pointers(walkers), cfg);
  const auto vb = model.value(num::constant(last.priv)).value();
  for (std::size_t e = 0; e < E; ++e) buf.bootstrap[e] = static_cast<double>(vb[e]);
  return buf;
}

/// Targets s_{t+1}, s_{t+2} from the same episode, masked where the episode
/// ends at or before t+k-1 or t+k falls outside the collected horizon.
inline void build_future_targets(RolloutBuffer& buf) {
  const std::size_t a = buf.amp_dim;
  std::fill(buf.target.begin(), buf.target.end(), 0.0);
  std::fill(buf.mask.begin(), buf.mask.end(), 0);
  for (std::size_t e = 0; e < buf.envs; ++e) {
    for (std::size_t t = 0; t < buf.steps; ++t) {
      const std::size_t i = buf.index(t, e);
      for (std::size_t k = 1; k <= 2; ++k) {
        if (t + k >= buf.steps || buf.done[buf.index(t + k - 1, e)]) break;
        buf.mask[i * 2 + (k - 1)] = 1;
        const double* s = buf.amp_state(buf.index(t + k, e));
        std::copy(s, s + a, buf.target.begin() + static_cast<std::ptrdiff_t>((i * 2 + (k - 1)) * a));
      }
    }
  }
}

}  // namespace pkfr::train
