#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "pkfr/num/errors.hpp"

namespace pkfr::policy {

enum class ModelKind { kParkourFormer, kMlp, kMoe4, kVanillaTransformer };

inline std::string_view model_name(ModelKind k) {
  switch (k) {
    case ModelKind::kParkourFormer: return "parkourformer";
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kMoe4: return "moe4";
    case ModelKind::kVanillaTransformer: return "vanilla_transformer";
  }
  throw ContractError("unknown model kind");
}

inline std::optional<ModelKind> parse_model(std::string_view s) {
  for (auto k : {ModelKind::kParkourFormer, ModelKind::kMlp, ModelKind::kMoe4, ModelKind::kVanillaTransformer})
    if (model_name(k) == s) return k;
  return std::nullopt;
}

struct PolicyConfig {
  ModelKind kind = ModelKind::kParkourFormer;

  // Planar walker dimensions.
  std::size_t obs_dim = 16;
  std::size_t amp_dim = 12;
  std::size_t action_dim = 4;
  std::size_t v_l_dim = 1;
  std::size_t history = 8;
  std::size_t rays = 32;
  double d_max = 5.0;

  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t context_dim = 128;
  std::size_t ffn_hidden = 256;
  std::size_t depth_hidden = 128;
  std::vector<std::size_t> critic_hidden = {256, 256};
  std::size_t baseline_hidden = 256;
  std::size_t expert_hidden = 128;
  double ln_eps = 1e-5;
  double init_log_std = -0.5;

  bool conventional_residual = false;  // Q' = H + FFN(LN(H), c) instead of FFN(LN(H), c) + LN(H)
  bool detach_future = false;          // stop action-loss gradients at the predicted states
  bool critic_sees_scan = false;

  // Ablations.
  bool no_depth_query = false;
  bool no_future_prediction = false;

  std::size_t privileged_dim() const { return obs_dim + v_l_dim + (critic_sees_scan ? rays : 0); }

  bool has_future_head() const { return kind == ModelKind::kParkourFormer && !no_future_prediction; }

  /// Rows of the discriminator sequence: history plus predicted future when present.
  std::size_t discriminator_rows() const { return history + (has_future_head() ? 2 : 0); }

  void validate() const {
    if (history == 0 || obs_dim == 0 || amp_dim == 0 || action_dim == 0 || rays == 0) {
      throw ContractError("policy config: dimensions must be positive");
    }
    if (width == 0 || width % 2 != 0) throw ContractError("policy config: width must be positive and even");
    if (heads == 0 || width % heads != 0) throw ContractError("policy config: width must divide into heads");
    if (layers == 0) throw ContractError("policy config: need at least one backbone layer");
    if (!(d_max > 0.0)) throw ContractError("policy config: d_max must be positive");
  }
};

}  // namespace pkfr::policy
