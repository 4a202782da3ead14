#pragma once

#include <optional>

#include "pkfr/policy/baselines.hpp"
#include "pkfr/policy/gaussian.hpp"

namespace pkfr::policy {

/// Actor of any supported kind plus the critic.
template <std::floating_point T>
struct ActorCritic {
  PolicyConfig cfg;
  std::optional<ParkourFormerParams<T>> parkourformer;
  std::optional<MlpBaselineParams<T>> mlp;
  std::optional<Moe4Params<T>> moe4;
  std::optional<VanillaTransformerParams<T>> vanilla;
  CriticParams<T> critic;

  static ActorCritic init(const PolicyConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ActorCritic m;
    m.cfg = cfg;
    switch (cfg.kind) {
      case ModelKind::kParkourFormer: m.parkourformer = ParkourFormerParams<T>::init(cfg, rng); break;
      case ModelKind::kMlp: m.mlp = MlpBaselineParams<T>::init(cfg, rng); break;
      case ModelKind::kMoe4: m.moe4 = Moe4Params<T>::init(cfg, rng); break;
      case ModelKind::kVanillaTransformer: m.vanilla = VanillaTransformerParams<T>::init(cfg, rng); break;
      default: throw ContractError("ActorCritic: unknown model kind");
    }
    m.critic = CriticParams<T>::init(cfg, rng);
    return m;
  }

  /// history: [B, 8, obs]; scan: [B, K].
  ActorOutput<T> actor(const Var<T>& history, const Var<T>& scan) const {
    switch (cfg.kind) {
      case ModelKind::kParkourFormer: return parkourformer_forward(*parkourformer, history, scan);
      case ModelKind::kMlp: return mlp_forward(*mlp, history, scan);
      case ModelKind::kMoe4: return moe4_forward(*moe4, history, scan);
      case ModelKind::kVanillaTransformer: return vanilla_forward(*vanilla, history, scan);
    }
    throw ContractError("ActorCritic: unknown model kind");
  }

  Var<T> value(const Var<T>& privileged) const { return critic_value(critic, privileged); }

  /// Every learnable array, named and tagged with its family.
  ParamList<T> parameters() const {
    ParamList<T> out;
    if (parkourformer) parkourformer->collect(out);
    if (mlp) mlp->collect(out);
    if (moe4) moe4->collect(out);
    if (vanilla) vanilla->collect(out);
    critic.collect(out);
    return out;
  }
};

/// Baseline dispatch by kind; the ParkourFormer is not a baseline.
template <std::floating_point T>
ActorOutput<T> baseline_forward(const ActorCritic<T>& m, const Var<T>& history, const Var<T>& scan) {
  if (m.cfg.kind == ModelKind::kParkourFormer) {
    throw ContractError("baseline_forward: parkourformer is not a baseline kind");
  }
  return m.actor(history, scan);
}

}  // namespace pkfr::policy
