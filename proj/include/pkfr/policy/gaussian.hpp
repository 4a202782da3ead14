#pragma once

#include <cmath>
#include <random>

#include "pkfr/num/graph.hpp"

namespace pkfr::policy {

using num::Array;
using num::Var;

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// Diagonal Gaussian log-density summed over the last axis.
/// action, mean: [..., n]; log_std: [n].
template <std::floating_point T>
Var<T> gaussian_log_prob(const Var<T>& action, const Var<T>& mean, const Var<T>& log_std) {
  const auto z = num::mul(num::sub(action, mean), num::exp(-log_std));
  const auto per = num::sub(num::scale(num::square(z), T(-0.5)), log_std);
  return num::add_scalar(num::sum_last(per), static_cast<T>(-kHalfLog2Pi * log_std.dim(-1)));
}

/// Entropy of the diagonal Gaussian (state-independent).
template <std::floating_point T>
Var<T> gaussian_entropy(const Var<T>& log_std) {
  return num::add_scalar(num::sum(log_std), static_cast<T>((0.5 + kHalfLog2Pi) * log_std.dim(-1)));
}

/// mean + exp(log_std) * eps with eps ~ N(0, 1), outside the graph.
template <std::floating_point T>
Array<T> gaussian_sample(const Array<T>& mean, const Array<T>& log_std, std::mt19937_64& rng) {
  Array<T> out = mean;
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t k = log_std.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(mean[i]) + std::exp(static_cast<double>(log_std[i % k])) * n(rng));
  }
  return out;
}

}  // namespace pkfr::policy
