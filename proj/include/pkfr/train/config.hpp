#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "pkfr/amp/discriminator.hpp"
#include "pkfr/env/walker.hpp"
#include "pkfr/policy/config.hpp"

namespace pkfr::train {

struct LossWeights {
  double c1 = 0.5;     // value
  double c2 = 1.0;     // future prediction
  double c3 = 0.005;   // entropy
  double c4 = 1.0;     // style term on the forecast
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  double beta = 1.0;   // extra prediction weight on negative-advantage samples
  double lr = 3e-4;
  int epochs = 4;
  std::size_t minibatch = 256;

  void validate() const {
    for (double v : {c1, c2, c3, c4, gamma, lambda, beta, lr}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("loss weights must be finite and non-negative");
    }
    if (!(clip > 0.0 && clip < 1.0)) throw ContractError("clip epsilon must lie in (0, 1)");
    if (gamma > 1.0 || lambda > 1.0) throw ContractError("gamma and lambda must not exceed 1");
    if (epochs <= 0) throw ContractError("epochs must be positive");
    if (minibatch == 0) throw ContractError("minibatch must be positive");
  }
};

struct TrainConfig {
  policy::PolicyConfig policy;
  amp::DiscriminatorConfig disc;
  env::EnvConfig env;
  LossWeights weights;

  env::TerrainFamily family = env::TerrainFamily::kRoughGround;
  double difficulty = 0.0;
  std::size_t envs = 32;
  std::size_t steps = 64;
  int iterations = 300;
  double disc_lr = 1e-3;
  double max_grad_norm = 1.0;
  bool no_supervised_loss = false;  // ablation: keep the forecast head but drop its supervised term
  std::uint64_t seed = 0;

  /// Brings the dependent dimensions in line with the environment.
  void sync() {
    policy.obs_dim = env::kObsDim;
    policy.amp_dim = env::kAmpDim;
    policy.action_dim = env::kJointCount;
    policy.v_l_dim = 1;
    policy.history = env::kHistoryLength;
    policy.rays = env.depth.rays;
    policy.d_max = env.depth.d_max;
    disc.amp_dim = env::kAmpDim;
    disc.rows = policy.discriminator_rows();
  }

  void validate() const {
    policy.validate();
    weights.validate();
    if (policy.kind != policy::ModelKind::kParkourFormer &&
        (policy.no_depth_query || policy.no_future_prediction || no_supervised_loss)) {
      throw ContractError("ablation flags apply only to the parkourformer model");
    }
    if (envs == 0 || steps == 0) throw ContractError("envs and steps must be positive");
    if (iterations < 0) throw ContractError("iterations must be non-negative");
    if (disc.ensemble == 0) throw ContractError("discriminator ensemble must have at least one member");
    if (!(difficulty >= 0.0 && difficulty <= 1.0)) throw ContractError("difficulty must lie in [0, 1]");
    if (!(disc_lr > 0.0) || !(weights.lr > 0.0)) throw ContractError("learning rates must be positive");
  }

  double effective_c2() const { return no_supervised_loss ? 0.0 : weights.c2; }
};

}  // namespace pkfr::train
