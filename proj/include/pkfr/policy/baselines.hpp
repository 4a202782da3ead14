#pragma once

#include <array>

#include "pkfr/policy/parkourformer.hpp"

namespace pkfr::policy {

/// Critic over privileged proprioception: separate feed-forward net.
template <std::floating_point T>
struct CriticParams {
  nn::Mlp<T> net;

  static CriticParams init(const PolicyConfig& cfg, Rng& rng) {
    std::vector<std::size_t> widths{cfg.privileged_dim()};
    widths.insert(widths.end(), cfg.critic_hidden.begin(), cfg.critic_hidden.end());
    widths.push_back(1);
    return {nn::Mlp<T>::init(widths, nn::Activation::kSilu, rng)};
  }

  void collect(ParamList<T>& out) const { net.collect("critic", Family::kCritic, out); }
};

/// Scalar value per row. privileged: [B, P] or [P].
template <std::floating_point T>
Var<T> critic_value(const CriticParams<T>& p, const Var<T>& privileged) {
  if (privileged.rank() == 0 || privileged.shape().back() != p.net.in_dim()) {
    throw ShapeError("critic_value: privileged observation " + num::shape_string(privileged.shape()) +
                     " must have length " + std::to_string(p.net.in_dim()) + " on axis -1");
  }
  const auto v = p.net(privileged);
  num::Shape s(v.shape().begin(), v.shape().end() - 1);
  return s.empty() ? num::reshape(v, {}) : num::reshape(v, s);
}

namespace detail {

template <std::floating_point T>
Var<T> flat_inputs(const PolicyConfig& cfg, const Var<T>& history, const Var<T>& scan) {
  if (history.rank() != 3 || history.dim(1) != cfg.history || history.dim(2) != cfg.obs_dim) {
    throw ShapeError("baseline: history " + num::shape_string(history.shape()) + " must be [B, " +
                     std::to_string(cfg.history) + ", " + std::to_string(cfg.obs_dim) + "]");
  }
  if (scan.rank() != 2 || scan.dim(1) != cfg.rays) {
    throw ShapeError("baseline: scan " + num::shape_string(scan.shape()) + " must be [B, " +
                     std::to_string(cfg.rays) + "]");
  }
  const auto h = num::reshape(history, {history.dim(0), cfg.history * cfg.obs_dim});
  const auto s = num::scale(num::clip(scan, 0.0, cfg.d_max), static_cast<T>(1.0 / cfg.d_max));
  return num::concat<T>({h, s});
}

template <std::floating_point T>
Var<T> init_log_std(const PolicyConfig& cfg) {
  return num::parameter(Array<T>({cfg.action_dim}, static_cast<T>(cfg.init_log_std)));
}

template <std::floating_point T>
void shrink(Linear<T>& l) {
  for (auto& v : l.weight.mutable_value().storage()) v *= T(0.01);
}

}  // namespace detail

/// Single feed-forward actor over flattened history and scan.
template <std::floating_point T>
struct MlpBaselineParams {
  PolicyConfig cfg;
  nn::Mlp<T> net;
  Var<T> log_std;

  static MlpBaselineParams init(const PolicyConfig& cfg, Rng& rng) {
    MlpBaselineParams p;
    p.cfg = cfg;
    const std::size_t in = cfg.history * cfg.obs_dim + cfg.rays;
    p.net = nn::Mlp<T>::init({in, cfg.baseline_hidden, cfg.baseline_hidden, cfg.action_dim},
                             nn::Activation::kSilu, rng);
    detail::shrink(p.net.layers.back());
    p.log_std = detail::init_log_std<T>(cfg);
    return p;
  }

  void collect(ParamList<T>& out) const {
    net.collect("actor.mlp", Family::kActor, out);
    out.add("actor.log_std", Family::kActor, log_std);
  }
};

inline constexpr std::size_t kExperts = 4;

/// Softmax-gated mixture of four feed-forward experts.
template <std::floating_point T>
struct Moe4Params {
  PolicyConfig cfg;
  Linear<T> gate;
  std::array<nn::Mlp<T>, kExperts> experts;
  Var<T> log_std;

  static Moe4Params init(const PolicyConfig& cfg, Rng& rng) {
    Moe4Params p;
    p.cfg = cfg;
    const std::size_t in = cfg.history * cfg.obs_dim + cfg.rays;
    p.gate = Linear<T>::init(in, kExperts, true, rng);
    for (auto& e : p.experts) {
      e = nn::Mlp<T>::init({in, cfg.expert_hidden, cfg.expert_hidden, cfg.action_dim}, nn::Activation::kSilu, rng);
      detail::shrink(e.layers.back());
    }
    p.log_std = detail::init_log_std<T>(cfg);
    return p;
  }

  void collect(ParamList<T>& out) const {
    gate.collect("actor.gate", Family::kActor, out);
    for (std::size_t i = 0; i < kExperts; ++i)
      experts[i].collect("actor.expert" + std::to_string(i), Family::kActor, out);
    out.add("actor.log_std", Family::kActor, log_std);
  }
};

/// sum_i gate[:, i] * expert_i, with gate [B, E] and experts [B, n].
template <std::floating_point T>
Var<T> mix_experts(const Var<T>& gate, const std::vector<Var<T>>& outputs) {
  if (gate.rank() != 2 || gate.dim(1) != outputs.size()) {
    throw ShapeError("mix_experts: gate " + num::shape_string(gate.shape()) + " does not match " +
                     std::to_string(outputs.size()) + " experts");
  }
  Var<T> acc;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto term = num::mul(num::slice_last(gate, i, i + 1), outputs[i]);
    acc = acc.defined() ? num::add(acc, term) : term;
  }
  return acc;
}

/// Plain SwiGLU feed-forward: W5(SiLU(W3 x) * W4 x).
template <std::floating_point T>
struct SwiGLUParams {
  Linear<T> w3, w4, w5;

  static SwiGLUParams init(std::size_t width, std::size_t hidden, Rng& rng) {
    return {Linear<T>::init(width, hidden, true, rng), Linear<T>::init(width, hidden, true, rng),
            Linear<T>::init(hidden, width, true, rng)};
  }

  Var<T> operator()(const Var<T>& x) const { return w5(num::mul(num::silu(w3(x)), w4(x))); }

  void collect(const std::string& prefix, Family f, ParamList<T>& out) const {
    w3.collect(prefix + ".w3", f, out);
    w4.collect(prefix + ".w4", f, out);
    w5.collect(prefix + ".w5", f, out);
  }
};

/// Self-attention encoder over the history tokens plus one depth token.
template <std::floating_point T>
struct VanillaTransformerParams {
  struct Layer {
    nn::AttentionParams<T> attention;
    SwiGLUParams<T> ffn;
  };
  PolicyConfig cfg;
  Linear<T> w1;
  Array<T> positions;  // history + 1 rows
  DepthEncoder<T> depth;
  std::vector<Layer> layers;
  Linear<T> action;
  Var<T> log_std;

  static VanillaTransformerParams init(const PolicyConfig& cfg, Rng& rng) {
    cfg.validate();
    VanillaTransformerParams p;
    p.cfg = cfg;
    const std::size_t w = cfg.width;
    p.w1 = Linear<T>::init(cfg.obs_dim, w, true, rng);
    p.positions = nn::sinusoidal_positions<T>(cfg.history + 1, w);
    p.depth = DepthEncoder<T>::init(cfg.rays, cfg.depth_hidden, w, std::nullopt, cfg.d_max, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      p.layers.push_back({nn::AttentionParams<T>::init(w, cfg.heads, rng),
                          SwiGLUParams<T>::init(w, cfg.ffn_hidden, rng)});
    }
    p.action = Linear<T>::init(w, cfg.action_dim, true, rng);
    detail::shrink(p.action);
    p.log_std = detail::init_log_std<T>(cfg);
    return p;
  }

  void collect(ParamList<T>& out) const {
    const auto f = Family::kActor;
    w1.collect("actor.w1", f, out);
    depth.collect("actor.depth", f, out);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string pre = "actor.layer" + std::to_string(l);
      layers[l].attention.collect(pre + ".attention", f, out);
      layers[l].ffn.collect(pre + ".ffn", f, out);
    }
    action.collect("actor.action", f, out);
    out.add("actor.log_std", f, log_std);
  }
};

template <std::floating_point T>
ActorOutput<T> mlp_forward(const MlpBaselineParams<T>& p, const Var<T>& history, const Var<T>& scan) {
  return {p.net(detail::flat_inputs(p.cfg, history, scan)), p.log_std, {}};
}

template <std::floating_point T>
ActorOutput<T> moe4_forward(const Moe4Params<T>& p, const Var<T>& history, const Var<T>& scan) {
  const auto x = detail::flat_inputs(p.cfg, history, scan);
  std::vector<Var<T>> outs;
  for (const auto& e : p.experts) outs.push_back(e(x));
  return {mix_experts(num::softmax(p.gate(x)), outs), p.log_std, {}};
}

template <std::floating_point T>
ActorOutput<T> vanilla_forward(const VanillaTransformerParams<T>& p, const Var<T>& history, const Var<T>& scan) {
  const auto& cfg = p.cfg;
  if (history.rank() != 3 || history.dim(1) != cfg.history) {
    throw ShapeError("vanilla_transformer: history " + num::shape_string(history.shape()) + " must be [B, " +
                     std::to_string(cfg.history) + ", obs]");
  }
  const std::size_t b = history.dim(0), w = cfg.width, n = cfg.history + 1;
  const auto frames = p.w1(history);
  const auto z = p.depth.token(p.depth.features(scan));
  auto x = num::add(num::concat<T>({num::reshape(frames, {b, cfg.history * w}), z}), num::constant(
      p.positions.reshaped({n * w})));
  x = num::reshape(x, {b, n, w});
  for (const auto& layer : p.layers) {
    const auto h = num::add(nn::cross_attention(layer.attention, x, x), x);
    const auto hn = num::layer_norm(h, cfg.ln_eps);
    const auto f = layer.ffn(hn);
    x = cfg.conventional_residual ? num::add(h, f) : num::add(f, hn);
  }
  // The newest history token summarizes the sequence.
  const auto last = num::slice_last(num::reshape(x, {b, n * w}), (cfg.history - 1) * w, cfg.history * w);
  return {p.action(last), p.log_std, {}};
}

}  // namespace pkfr::policy
