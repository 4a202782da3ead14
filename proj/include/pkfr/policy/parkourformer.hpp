#pragma once

#include <optional>
#include <vector>

#include "pkfr/nn/attention.hpp"
#include "pkfr/nn/positional.hpp"
#include "pkfr/nn/swiglu.hpp"
#include "pkfr/policy/config.hpp"

namespace pkfr::policy {

using nn::Family;
using nn::Linear;
using nn::ParamList;
using nn::Rng;
using num::Array;
using num::Var;

/// Two-layer SiLU encoder over the normalized scan; its last hidden layer is
/// projected to the depth token and, optionally, to the terrain context.
template <std::floating_point T>
struct DepthEncoder {
  Linear<T> hidden1, hidden2, token;
  std::optional<Linear<T>> context;
  double d_max = 5.0;

  static DepthEncoder init(std::size_t rays, std::size_t hidden, std::size_t width,
                           std::optional<std::size_t> context_dim, double d_max, Rng& rng) {
    DepthEncoder e;
    e.hidden1 = Linear<T>::init(rays, hidden, true, rng);
    e.hidden2 = Linear<T>::init(hidden, hidden, true, rng);
    e.token = Linear<T>::init(hidden, width, true, rng);
    if (context_dim) e.context = Linear<T>::init(hidden, *context_dim, true, rng);
    e.d_max = d_max;
    return e;
  }

  std::size_t rays() const { return hidden1.in_dim(); }

  Var<T> features(const Var<T>& scan) const {
    if (scan.rank() == 0 || scan.shape().back() != rays()) {
      throw ShapeError("encode_depth: scan " + num::shape_string(scan.shape()) + " must have " +
                       std::to_string(rays()) + " rays on axis -1");
    }
    const auto x = num::scale(num::clip(scan, 0.0, d_max), static_cast<T>(1.0 / d_max));
    return num::silu(hidden2(num::silu(hidden1(x))));
  }

  void collect(const std::string& prefix, Family f, ParamList<T>& out) const {
    hidden1.collect(prefix + ".hidden1", f, out);
    hidden2.collect(prefix + ".hidden2", f, out);
    token.collect(prefix + ".token", f, out);
    if (context) context->collect(prefix + ".context", f, out);
  }
};

template <std::floating_point T>
struct BackboneLayer {
  nn::AttentionParams<T> attention;
  nn::ConditionalSwiGLUParams<T> ffn;
};

template <std::floating_point T>
struct ParkourFormerParams {
  PolicyConfig cfg;
  Linear<T> w1, w2, wq;
  Array<T> positions;  // fixed sinusoidal table, not learned
  std::vector<BackboneLayer<T>> layers;
  DepthEncoder<T> depth;
  std::optional<Linear<T>> predict;
  Linear<T> action;
  Var<T> log_std;

  static ParkourFormerParams init(const PolicyConfig& cfg, Rng& rng) {
    cfg.validate();
    ParkourFormerParams p;
    p.cfg = cfg;
    const std::size_t w = cfg.width;
    p.w1 = Linear<T>::init(cfg.obs_dim, w, true, rng);
    p.w2 = Linear<T>::init(2 * w, w, true, rng);
    p.wq = Linear<T>::init(w, 2 * w, true, rng);
    p.positions = nn::sinusoidal_positions<T>(cfg.history, w);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      p.layers.push_back({nn::AttentionParams<T>::init(w, cfg.heads, rng),
                          nn::ConditionalSwiGLUParams<T>::init(w, cfg.ffn_hidden, cfg.context_dim, rng)});
    }
    p.depth = DepthEncoder<T>::init(cfg.rays, cfg.depth_hidden, w, cfg.context_dim, cfg.d_max, rng);
    if (cfg.has_future_head()) p.predict = Linear<T>::init(w, 2 * cfg.amp_dim, true, rng);
    // Without a forecast head the action layer keeps its width and reads zeros.
    p.action = Linear<T>::init(w + 2 * cfg.amp_dim, cfg.action_dim, true, rng);
    // Small initial action means keep early rollouts near the nominal pose.
    for (auto& v : p.action.weight.mutable_value().storage()) v *= T(0.01);
    p.log_std = num::parameter(Array<T>({cfg.action_dim}, static_cast<T>(cfg.init_log_std)));
    return p;
  }

  void collect(ParamList<T>& out) const {
    const auto f = Family::kActor;
    w1.collect("actor.w1", f, out);
    w2.collect("actor.w2", f, out);
    wq.collect("actor.wq", f, out);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string pre = "actor.layer" + std::to_string(l);
      layers[l].attention.collect(pre + ".attention", f, out);
      layers[l].ffn.collect(pre + ".ffn", f, out);
    }
    depth.collect("actor.depth", f, out);
    if (predict) predict->collect("actor.predict", f, out);
    action.collect("actor.action", f, out);
    out.add("actor.log_std", f, log_std);
  }
};

namespace detail {

/// Row i of a [.., 2, W] token block as [.., W].
template <std::floating_point T>
Var<T> token(const Var<T>& q, std::size_t i) {
  const std::size_t w = q.shape().back();
  num::Shape flat(q.shape().begin(), q.shape().end() - 2);
  flat.push_back(q.dim(-2) * w);
  return num::slice_last(num::reshape(q, flat), i * w, (i + 1) * w);
}

/// Folds the last two axes into one.
template <std::floating_point T>
Var<T> flatten_last2(const Var<T>& x) {
  num::Shape s(x.shape().begin(), x.shape().end() - 2);
  s.push_back(x.dim(-2) * x.dim(-1));
  return num::reshape(x, s);
}

}  // namespace detail

/// M = W1 o (per frame) + positions. history: [8, obs] or [B, 8, obs].
template <std::floating_point T>
Var<T> build_memory(const ParkourFormerParams<T>& p, const Var<T>& history) {
  if (history.rank() < 2 || history.dim(-2) != p.cfg.history) {
    throw ContractError("build_memory: history " + num::shape_string(history.shape()) + " must hold " +
                        std::to_string(p.cfg.history) + " frames on axis -2");
  }
  return num::add(p.w1(history), num::constant(p.positions));
}

/// (z, c) from a scan [K] or [B, K].
template <std::floating_point T>
std::pair<Var<T>, Var<T>> encode_depth(const ParkourFormerParams<T>& p, const Var<T>& scan) {
  const auto h = p.depth.features(scan);
  return {p.depth.token(h), (*p.depth.context)(h)};
}

/// Q0 = LN(Wq W2 [W1 o_t; z]) reshaped to two tokens.
template <std::floating_point T>
Var<T> build_query(const ParkourFormerParams<T>& p, const Var<T>& current_obs, const Var<T>& z) {
  const auto x = p.w1(current_obs);
  const auto zz = p.cfg.no_depth_query ? num::constant(Array<T>(z.shape(), T{0})) : z;
  const auto fused = p.w2(num::concat<T>({x, zz}));
  auto q = p.wq(fused);
  num::Shape s(q.shape().begin(), q.shape().end() - 1);
  s.push_back(2);
  s.push_back(p.cfg.width);
  return num::layer_norm(num::reshape(q, s), p.cfg.ln_eps);
}

/// One residual cross-attention + conditional-FFN layer.
template <std::floating_point T>
Var<T> backbone_layer(const BackboneLayer<T>& layer, const Var<T>& q, const Var<T>& memory, const Var<T>& c,
                      const PolicyConfig& cfg) {
  const auto h = num::add(nn::cross_attention(layer.attention, q, memory), q);
  const auto hn = num::layer_norm(h, cfg.ln_eps);
  const auto f = nn::conditional_swiglu(layer.ffn, hn, c);
  return cfg.conventional_residual ? num::add(h, f) : num::add(f, hn);
}

template <std::floating_point T>
Var<T> backbone_forward(const ParkourFormerParams<T>& p, const Var<T>& q0, const Var<T>& memory,
                        const Var<T>& c) {
  Var<T> q = q0;
  for (const auto& layer : p.layers) q = backbone_layer(layer, q, memory, c, p.cfg);
  return q;
}

/// Deterministic two-step forecast [.., 2, amp] from query token 0.
template <std::floating_point T>
Var<T> predict_future(const ParkourFormerParams<T>& p, const Var<T>& q) {
  if (!p.predict) throw ContractError("predict_future: model was built without a prediction head");
  const auto y = (*p.predict)(detail::token(q, 0));
  num::Shape s(y.shape().begin(), y.shape().end() - 1);
  s.push_back(2);
  s.push_back(p.cfg.amp_dim);
  return num::reshape(y, s);
}

/// Action mean from query token 1 and the flattened forecast (when present).
template <std::floating_point T>
Var<T> action_mean(const ParkourFormerParams<T>& p, const Var<T>& q, const Var<T>& future) {
  auto t1 = detail::token(q, 1);
  if (!p.predict) {
    num::Shape s(t1.shape().begin(), t1.shape().end() - 1);
    s.push_back(2 * p.cfg.amp_dim);
    return p.action(num::concat<T>({t1, num::constant(Array<T>(s, T{0}))}));
  }
  if (future.rank() < 2 || future.dim(-2) != 2) {
    throw ShapeError("act: predicted future " + num::shape_string(future.shape()) + " must have 2 rows");
  }
  auto f = detail::flatten_last2(future);
  if (p.cfg.detach_future) f = num::detach(f);
  return p.action(num::concat<T>({t1, f}));
}

template <std::floating_point T>
struct ActorOutput {
  Var<T> mean;
  Var<T> log_std;
  Var<T> future;  // undefined when the model has no forecast head
};

/// Full actor pass. history: [B, 8, obs], scan: [B, K].
template <std::floating_point T>
ActorOutput<T> parkourformer_forward(const ParkourFormerParams<T>& p, const Var<T>& history, const Var<T>& scan) {
  const auto memory = build_memory(p, history);
  auto [z, c] = encode_depth(p, scan);
  if (p.cfg.no_depth_query) {
    // The ablated model sees no terrain: both the query token and the context are zero.
    z = num::constant(Array<T>(z.shape(), T{0}));
    c = num::constant(Array<T>(c.shape(), T{0}));
  }
  const std::size_t obs = p.cfg.obs_dim;
  const std::size_t last = (p.cfg.history - 1) * obs;
  num::Shape flat(history.shape().begin(), history.shape().end() - 2);
  flat.push_back(p.cfg.history * obs);
  const auto current = num::slice_last(num::reshape(history, flat), last, last + obs);
  const auto q = backbone_forward(p, build_query(p, current, z), memory, c);
  ActorOutput<T> out;
  if (p.predict) out.future = predict_future(p, q);
  out.mean = action_mean(p, q, out.future);
  out.log_std = p.log_std;
  return out;
}

}  // namespace pkfr::policy
