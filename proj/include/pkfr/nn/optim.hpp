#pragma once

#include <cmath>
#include <vector>

#include "pkfr/num/graph.hpp"

namespace pkfr::nn {

using num::Array;
using num::Var;

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 1.0;  // global-norm clip; <= 0 disables
};

/// Adam over a fixed set of leaf parameters. Moments are kept in double.
template <std::floating_point T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      if (!p.is_leaf()) throw ContractError("Adam: parameters must be leaves");
      m_.emplace_back(p.value().size(), 0.0);
      v_.emplace_back(p.value().size(), 0.0);
    }
  }

  /// Applies one update from the gradients of a scalar loss. Returns the
  /// gradient norm before clipping.
  double step(const num::Gradients<T>& grads) {
    std::vector<Array<T>> g;
    g.reserve(params_.size());
    double sq = 0.0;
    for (const auto& p : params_) {
      g.push_back(grads.of(p));
      for (T x : g.back().storage()) sq += static_cast<double>(x) * static_cast<double>(x);
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) return norm;  // leave weights and moments untouched
    const double scale = cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm ? cfg_.max_grad_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k].mutable_value().storage();
      auto& m = m_[k];
      auto& v = v_[k];
      const auto& gk = g[k].storage();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = scale * static_cast<double>(gk[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double upd = cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - upd);
      }
    }
    return norm;
  }

  std::size_t steps() const { return t_; }
  const std::vector<Var<T>>& params() const { return params_; }

 private:
  std::vector<Var<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace pkfr::nn
