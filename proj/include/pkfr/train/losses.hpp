#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "pkfr/train/rollout.hpp"

namespace pkfr::train {

struct GaeResult {
  std::vector<double> advantage;
  std::vector<double> returns;
};

/// Generalized advantage estimation over one trajectory segment. done[t]
/// cuts both the bootstrap and the advantage recursion after step t.
inline GaeResult gae(const std::vector<double>& reward, const std::vector<double>& value,
                     const std::vector<std::uint8_t>& done, double last_value, double gamma, double lambda) {
  const std::size_t n = reward.size();
  if (value.size() != n || done.size() != n) throw ShapeError("gae: reward, value and done lengths differ");
  GaeResult r{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double live = done[k] ? 0.0 : 1.0;
    const double next_v = k + 1 < n ? value[k + 1] : last_value;
    const double delta = reward[k] + gamma * next_v * live - value[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantage[k] = next_adv;
    r.returns[k] = next_adv + value[k];
  }
  return r;
}

/// Zero mean, unit (population) standard deviation.
inline std::vector<double> normalize_advantages(std::vector<double> a) {
  if (a.empty()) return a;
  const double n = static_cast<double>(a.size());
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n) + 1e-8;
  for (double& v : a) v = (v - mean) / sd;
  return a;
}

/// Fills advantages (raw and normalized) and returns. The per-step reward is
/// the task reward plus the style reward.
inline void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  std::vector<double> r(buf.steps), v(buf.steps);
  std::vector<std::uint8_t> d(buf.steps);
  for (std::size_t e = 0; e < buf.envs; ++e) {
    for (std::size_t t = 0; t < buf.steps; ++t) {
      const std::size_t i = buf.index(t, e);
      r[t] = buf.task_reward[i] + buf.amp_reward[i];
      v[t] = buf.value[i];
      d[t] = buf.done[i];
    }
    const auto g = gae(r, v, d, buf.bootstrap[e], gamma, lambda);
    for (std::size_t t = 0; t < buf.steps; ++t) {
      const std::size_t i = buf.index(t, e);
      buf.advantage_raw[i] = g.advantage[t];
      buf.returns[i] = g.returns[t];
    }
  }
  buf.advantage = normalize_advantages(buf.advantage_raw);
}

/// w_i = 1 + beta on samples whose advantage is negative, 1 otherwise.
inline std::vector<double> prediction_weights(const std::vector<double>& advantage, double beta) {
  std::vector<double> w(advantage.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = advantage[i] < 0.0 ? 1.0 + beta : 1.0;
  return w;
}

/// Masked two-step forecast loss: sum_i sum_k w_i m_ik ||pred_ik - target_ik||^2
/// divided by sum_i sum_k w_i m_ik (zero when nothing is valid). Targets at
/// masked positions never enter the computation. weights may be empty (all 1).
template <std::floating_point T>
Var<T> prediction_loss(const Var<T>& predicted, const Array<T>& target, const std::vector<std::uint8_t>& mask,
                       const std::vector<double>& weights = {}) {
  if (predicted.rank() != 3 || predicted.dim(1) != 2 || target.shape() != predicted.shape()) {
    throw ShapeError("prediction_loss: prediction " + num::shape_string(predicted.shape()) + " and target " +
                     num::shape_string(target.shape()) + " must both be [B, 2, amp]");
  }
  const std::size_t b = predicted.dim(0), a = predicted.dim(2);
  if (mask.size() != 2 * b) throw ShapeError("prediction_loss: mask must hold 2 entries per sample");
  if (!weights.empty() && weights.size() != b) throw ShapeError("prediction_loss: one weight per sample");
  Array<T> clean({b, 2, a}, T{0});
  Array<T> coef({b, 2}, T{0});
  double norm = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    for (std::size_t k = 0; k < 2; ++k) {
      if (!mask[i * 2 + k]) continue;
      coef[i * 2 + k] = static_cast<T>(w);
      norm += w;
      for (std::size_t j = 0; j < a; ++j) clean[(i * 2 + k) * a + j] = target[(i * 2 + k) * a + j];
    }
  }
  if (norm == 0.0) return num::scalar_const(T{0});
  const auto err = num::sum_last(num::square(num::sub(predicted, num::constant(std::move(clean)))));
  return num::scale(num::sum(num::mul(err, num::constant(std::move(coef)))), static_cast<T>(1.0 / norm));
}

/// -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)), rho = exp(lp_new - lp_old).
template <std::floating_point T>
Var<T> ppo_surrogate(const Var<T>& log_prob, const Array<T>& old_log_prob, const Array<T>& advantage, double eps) {
  const auto ratio = num::exp(num::sub(log_prob, num::constant(old_log_prob)));
  const auto adv = num::constant(advantage);
  const auto unclipped = num::mul(ratio, adv);
  const auto clipped = num::mul(num::clip(ratio, 1.0 - eps, 1.0 + eps), adv);
  return num::scale(num::mean(num::minimum(unclipped, clipped)), T{-1});
}

template <std::floating_point T>
Var<T> value_loss(const Var<T>& value, const Array<T>& returns) {
  return num::mean(num::square(num::sub(value, num::constant(returns))));
}

/// Gathered rows of a rollout, converted to the model's precision.
template <std::floating_point T>
struct MiniBatch {
  std::size_t size = 0;
  Array<T> history, scan, priv, amp_history, action, log_prob, advantage, returns, target;
  Array<T> emitted;  // policy-side discriminator sequences as recorded, [B, rows * amp]
  std::vector<std::uint8_t> mask;
  std::vector<double> pred_weight;
};

template <std::floating_point T>
MiniBatch<T> make_minibatch(const RolloutBuffer& buf, const std::vector<std::size_t>& rows, double beta) {
  const std::size_t b = rows.size(), h = env::kHistoryLength, a = buf.amp_dim;
  if (b == 0) throw ContractError("make_minibatch: empty index set");
  MiniBatch<T> mb;
  mb.size = b;
  auto gather = [&](const std::vector<double>& src, std::size_t width, num::Shape shape) {
    Array<T> out(std::move(shape));
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < width; ++j) out[r * width + j] = static_cast<T>(src[rows[r] * width + j]);
    return out;
  };
  mb.history = gather(buf.history, h * buf.obs_dim, {b, h, buf.obs_dim});
  mb.scan = gather(buf.scan, buf.rays, {b, buf.rays});
  mb.priv = gather(buf.priv, buf.priv_dim, {b, buf.priv_dim});
  mb.amp_history = gather(buf.amp_history, h * a, {b, h, a});
  mb.action = gather(buf.action, buf.action_dim, {b, buf.action_dim});
  mb.log_prob = gather(buf.log_prob, 1, {b});
  mb.advantage = gather(buf.advantage, 1, {b});
  mb.returns = gather(buf.returns, 1, {b});
  mb.target = gather(buf.target, 2 * a, {b, 2, a});
  const std::size_t rows_out = buf.has_future ? h + 2 : h;
  mb.emitted = Array<T>({b, rows_out * a});
  for (std::size_t r = 0; r < b; ++r) {
    T* dst = mb.emitted.data().data() + r * rows_out * a;
    for (std::size_t j = 0; j < h * a; ++j) dst[j] = static_cast<T>(buf.amp_history[rows[r] * h * a + j]);
    if (buf.has_future)
      for (std::size_t j = 0; j < 2 * a; ++j) dst[h * a + j] = static_cast<T>(buf.predicted[rows[r] * 2 * a + j]);
  }
  mb.mask.resize(2 * b);
  std::vector<double> adv_raw(b);
  for (std::size_t r = 0; r < b; ++r) {
    mb.mask[2 * r] = buf.mask[2 * rows[r]];
    mb.mask[2 * r + 1] = buf.mask[2 * rows[r] + 1];
    adv_raw[r] = buf.advantage_raw[rows[r]];
  }
  mb.pred_weight = prediction_weights(adv_raw, beta);
  return mb;
}

struct LossReport {
  double total = 0.0;
  double ppo = 0.0;
  double value = 0.0;
  double pred = 0.0;           // unweighted masked forecast loss
  double pred_weighted = 0.0;  // advantage-weighted version used in the total
  double entropy = 0.0;
  double style = 0.0;          // mean (D(policy sequence) - 1)^2 over the members
};

struct CompositeOptions {
  double c2 = 1.0;                // supervised forecast weight actually applied
  bool detach_prediction = false;  // no style gradient into the forecast
};

/// L = L_ppo + c1 L_value + c2 L_pred^w - c3 H + c4 L_style. The style term
/// reaches the actor only through the forecast rows of its own sequences; the
/// discriminator weights are read but are not updated from this loss.
template <std::floating_point T>
Var<T> composite_loss(const policy::ActorCritic<T>& model, const amp::DiscriminatorSet<T>& discs,
                      const MiniBatch<T>& mb, const LossWeights& w, const CompositeOptions& opt,
                      LossReport* report = nullptr) {
  const auto out = model.actor(num::constant(mb.history), num::constant(mb.scan));
  const auto lp = policy::gaussian_log_prob(num::constant(mb.action), out.mean, out.log_std);
  const auto l_ppo = ppo_surrogate(lp, mb.log_prob, mb.advantage, w.clip);
  const auto l_value = value_loss(model.value(num::constant(mb.priv)), mb.returns);
  const auto entropy = policy::gaussian_entropy(out.log_std);

  auto total = num::add(l_ppo, num::scale(l_value, static_cast<T>(w.c1)));
  total = num::sub(total, num::scale(entropy, static_cast<T>(w.c3)));
  LossReport rep;
  if (out.future.defined()) {
    const auto l_pred_w = prediction_loss(out.future, mb.target, mb.mask, mb.pred_weight);
    if (opt.c2 != 0.0) total = num::add(total, num::scale(l_pred_w, static_cast<T>(opt.c2)));
    rep.pred_weighted = static_cast<double>(l_pred_w.value().item());
    rep.pred = static_cast<double>(prediction_loss(num::constant(out.future.value()), mb.target, mb.mask).value().item());
    if (!opt.detach_prediction && w.c4 != 0.0) {
      const auto seq = amp::assemble_policy_sequence(num::constant(mb.amp_history), out.future);
      Var<T> style;
      for (const auto& d : discs.members) {
        const auto term = num::mean(num::square(num::add_scalar(amp::discriminator_score(d, seq), T{-1})));
        style = style.defined() ? num::add(style, term) : term;
      }
      style = num::scale(style, static_cast<T>(1.0 / static_cast<double>(discs.members.size())));
      total = num::add(total, num::scale(style, static_cast<T>(w.c4)));
      rep.style = static_cast<double>(style.value().item());
    }
  }
  rep.total = static_cast<double>(total.value().item());
  rep.ppo = static_cast<double>(l_ppo.value().item());
  rep.value = static_cast<double>(l_value.value().item());
  rep.entropy = static_cast<double>(entropy.value().item());
  if (report) *report = rep;
  return total;
}

}  // namespace pkfr::train
