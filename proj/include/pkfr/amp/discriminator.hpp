#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pkfr/env/reference.hpp"
#include "pkfr/nn/layers.hpp"

namespace pkfr::amp {

using nn::Family;
using nn::ParamList;
using nn::Rng;
using num::Array;
using num::Var;

inline constexpr std::size_t kHistoryRows = 8;
inline constexpr std::size_t kFutureRows = 2;
inline constexpr std::size_t kSequenceRows = kHistoryRows + kFutureRows;

struct DiscriminatorConfig {
  std::size_t rows = kSequenceRows;  // 8 when the policy has no forecast
  std::size_t amp_dim = env::kAmpDim;
  std::vector<std::size_t> hidden = {128, 128};
  double w_gp = 5.0;
  std::size_t ensemble = 1;
  bool detach_prediction = false;  // stop style gradients at the predicted rows

  std::size_t input_dim() const { return rows * amp_dim; }
};

/// Tanh feed-forward net over a flattened sequence, producing one score.
template <std::floating_point T>
struct DiscriminatorParams {
  std::size_t rows = kSequenceRows;
  std::size_t amp_dim = env::kAmpDim;
  nn::Mlp<T> net;

  static DiscriminatorParams init(const DiscriminatorConfig& cfg, Rng& rng) {
    if (cfg.rows == 0 || cfg.amp_dim == 0) throw ContractError("discriminator: rows and amp_dim must be positive");
    std::vector<std::size_t> widths{cfg.input_dim()};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(1);
    return {cfg.rows, cfg.amp_dim, nn::Mlp<T>::init(widths, nn::Activation::kTanh, rng)};
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    net.collect(prefix, Family::kDiscriminator, out);
  }
};

namespace detail {

/// [B, rows, amp] or [B, rows*amp] -> [B, rows*amp].
template <std::floating_point T>
Var<T> flatten_batch(const DiscriminatorParams<T>& p, const Var<T>& seq) {
  const std::size_t in = p.rows * p.amp_dim;
  if (seq.rank() == 3 && seq.dim(1) == p.rows && seq.dim(2) == p.amp_dim) {
    return num::reshape(seq, {seq.dim(0), in});
  }
  if (seq.rank() == 2 && seq.dim(1) == in) return seq;
  throw ShapeError("discriminator: sequence batch " + num::shape_string(seq.shape()) + " must be [B, " +
                   std::to_string(p.rows) + ", " + std::to_string(p.amp_dim) + "]");
}

}  // namespace detail

/// Scores per sequence, shape [B].
template <std::floating_point T>
Var<T> discriminator_score(const DiscriminatorParams<T>& p, const Var<T>& seq) {
  const auto x = detail::flatten_batch(p, seq);
  return num::reshape(p.net(x), {x.dim(0)});
}

/// dD/dx for every row of the batch, [B, rows*amp], built from graph
/// primitives so that it can itself be differentiated with respect to the
/// discriminator weights.
template <std::floating_point T>
Var<T> score_input_gradient(const DiscriminatorParams<T>& p, const Var<T>& seq) {
  const auto x = detail::flatten_batch(p, seq);
  const auto& layers = p.net.layers;
  std::vector<Var<T>> hidden;
  Var<T> h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = num::tanh(layers[i](h));
    hidden.push_back(h);
  }
  auto g = num::matmul(num::constant(Array<T>({x.dim(0), 1}, T{1})), layers.back().weight);
  for (std::size_t i = layers.size() - 1; i-- > 0;) {
    const auto& hi = hidden[i];
    g = num::mul(g, num::add_scalar(num::scale(num::square(hi), T{-1}), T{1}));
    g = num::matmul(g, layers[i].weight);
  }
  return g;
}

struct DiscriminatorLossTerms {
  double real = 0.0;     // mean (D(ref) - 1)^2
  double fake = 0.0;     // mean (D(pol) + 1)^2
  double penalty = 0.0;  // mean ||dD/dref||^2
};

/// Least-squares loss with +1 targets on reference data, -1 on policy data and
/// a gradient penalty on the reference inputs.
template <std::floating_point T>
Var<T> discriminator_loss(const DiscriminatorParams<T>& p, const Var<T>& ref, const Var<T>& pol, double w_gp,
                          DiscriminatorLossTerms* terms = nullptr) {
  if (ref.rank() == 0 || pol.rank() == 0) throw ContractError("discriminator_loss: batches must be non-empty");
  const auto d_ref = discriminator_score(p, ref);
  const auto d_pol = discriminator_score(p, pol);
  const auto real = num::mean(num::square(num::add_scalar(d_ref, T{-1})));
  const auto fake = num::mean(num::square(num::add_scalar(d_pol, T{1})));
  auto loss = num::add(real, fake);
  Var<T> gp;
  if (w_gp != 0.0) {
    gp = num::mean(num::sum_last(num::square(score_input_gradient(p, ref))));
    loss = num::add(loss, num::scale(gp, static_cast<T>(w_gp)));
  }
  if (terms) {
    terms->real = real.value().item();
    terms->fake = fake.value().item();
    terms->penalty = gp.defined() ? gp.value().item() : 0.0;
  }
  return loss;
}

/// Style reward from a score: max(0, 1 - (D - 1)^2 / 4).
inline double amp_reward(double d) {
  if (std::isnan(d)) return 0.0;
  return std::max(0.0, 1.0 - 0.25 * (d - 1.0) * (d - 1.0));
}

template <std::floating_point T>
std::vector<double> amp_reward(const DiscriminatorParams<T>& p, const Var<T>& seq) {
  const auto d = discriminator_score(p, seq);
  std::vector<double> r;
  r.reserve(d.value().size());
  for (T v : d.value().storage()) r.push_back(amp_reward(static_cast<double>(v)));
  return r;
}

/// Stacks equally shaped sequences into one constant batch [B, ...].
template <std::floating_point T>
Var<T> stack_sequences(const std::vector<Array<T>>& seqs) {
  if (seqs.empty()) throw ContractError("stack_sequences: empty batch");
  num::Shape shape{seqs.size()};
  shape.insert(shape.end(), seqs.front().shape().begin(), seqs.front().shape().end());
  std::vector<T> data;
  data.reserve(num::shape_size(shape));
  for (const auto& s : seqs) {
    if (s.shape() != seqs.front().shape()) throw ShapeError("stack_sequences: sequences differ in shape");
    data.insert(data.end(), s.storage().begin(), s.storage().end());
  }
  return num::constant(Array<T>(std::move(shape), std::move(data)));
}

/// Real history followed by the forecast: [.., 8, amp] + [.., 2, amp] -> [.., 10, amp].
template <std::floating_point T>
Var<T> assemble_policy_sequence(const Var<T>& history, const Var<T>& predicted) {
  if (history.rank() < 2 || history.dim(-2) != kHistoryRows) {
    throw ContractError("assemble_policy_sequence: history " + num::shape_string(history.shape()) + " must hold " +
                        std::to_string(kHistoryRows) + " states");
  }
  if (predicted.rank() != history.rank() || predicted.dim(-2) != kFutureRows) {
    throw ContractError("assemble_policy_sequence: prediction " + num::shape_string(predicted.shape()) +
                        " must hold " + std::to_string(kFutureRows) + " states");
  }
  const std::size_t a = history.dim(-1);
  if (predicted.dim(-1) != a) throw ShapeError("assemble_policy_sequence: state widths differ");
  num::Shape lead(history.shape().begin(), history.shape().end() - 2);
  if (!std::equal(lead.begin(), lead.end(), predicted.shape().begin())) {
    throw ShapeError("assemble_policy_sequence: batch shapes differ");
  }
  auto flat = [&](std::size_t rows) {
    auto s = lead;
    s.push_back(rows * a);
    return s;
  };
  const auto joined =
      num::concat<T>({num::reshape(history, flat(kHistoryRows)), num::reshape(predicted, flat(kFutureRows))});
  auto out = lead;
  out.push_back(kSequenceRows);
  out.push_back(a);
  return num::reshape(joined, out);
}

/// Consecutive reference states at the control period: row k is the gait at
/// phase + k*dt/period.
template <std::floating_point T>
Array<T> assemble_reference_sequence(const env::ReferenceGait& gait, double phase, double dt,
                                     std::size_t rows = kSequenceRows) {
  Array<T> out({rows, env::kAmpDim});
  for (std::size_t k = 0; k < rows; ++k) {
    const auto s = env::reference_motion(phase + static_cast<double>(k) * dt / gait.period, gait);
    for (std::size_t j = 0; j < env::kAmpDim; ++j) out.at(k, j) = static_cast<T>(s[j]);
  }
  return out;
}

}  // namespace pkfr::amp

namespace pkfr::amp {

/// One or more independently initialized discriminators sharing an input
/// format; the style reward is the mean of the members' rewards.
template <std::floating_point T>
struct DiscriminatorSet {
  DiscriminatorConfig cfg;
  std::vector<DiscriminatorParams<T>> members;

  static DiscriminatorSet init(const DiscriminatorConfig& cfg, Rng& rng) {
    if (cfg.ensemble == 0) throw ContractError("discriminator ensemble must have at least one member");
    DiscriminatorSet s;
    s.cfg = cfg;
    for (std::size_t i = 0; i < cfg.ensemble; ++i) s.members.push_back(DiscriminatorParams<T>::init(cfg, rng));
    return s;
  }

  std::vector<double> reward(const Var<T>& seq) const {
    std::vector<double> r;
    for (const auto& m : members) {
      const auto ri = amp_reward(m, seq);
      if (r.empty()) r.assign(ri.size(), 0.0);
      for (std::size_t i = 0; i < ri.size(); ++i) r[i] += ri[i];
    }
    for (auto& v : r) v /= static_cast<double>(members.size());
    return r;
  }

  void collect(ParamList<T>& out) const {
    for (std::size_t i = 0; i < members.size(); ++i) members[i].collect("disc" + std::to_string(i), out);
  }
};

}  // namespace pkfr::amp
