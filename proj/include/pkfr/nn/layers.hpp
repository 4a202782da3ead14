#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "pkfr/num/graph.hpp"

namespace pkfr::nn {

using num::Array;
using num::Var;
using Rng = std::mt19937_64;

/// Parameter families optimized by separate objectives.
enum class Family { kActor, kCritic, kDiscriminator };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::kActor: return "actor";
    case Family::kCritic: return "critic";
    case Family::kDiscriminator: return "discriminator";
  }
  return "?";
}

template <std::floating_point T>
struct NamedParam {
  std::string name;
  Family family;
  Var<T> var;
};

/// Flat registry of learnable arrays. Each array may be registered once.
template <std::floating_point T>
class ParamList {
 public:
  void add(std::string name, Family family, const Var<T>& v) {
    if (!v.is_leaf() || !v.requires_grad()) {
      throw ContractError("ParamList: '" + name + "' is not a learnable leaf");
    }
    if (!names_.insert(name).second) throw ContractError("ParamList: duplicate name '" + name + "'");
    if (!nodes_.insert(v.node()).second) {
      throw ContractError("ParamList: array registered twice ('" + name + "')");
    }
    items_.push_back({std::move(name), family, v});
  }

  const std::vector<NamedParam<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::vector<Var<T>> vars(std::optional<Family> family = std::nullopt) const {
    std::vector<Var<T>> out;
    for (const auto& p : items_)
      if (!family || p.family == *family) out.push_back(p.var);
    return out;
  }

  std::size_t count_scalars(std::optional<Family> family = std::nullopt) const {
    std::size_t n = 0;
    for (const auto& p : items_)
      if (!family || p.family == *family) n += p.var.value().size();
    return n;
  }

 private:
  std::vector<NamedParam<T>> items_;
  std::unordered_set<std::string> names_;
  std::unordered_set<const num::Node<T>*> nodes_;
};

template <std::floating_point T>
Array<T> uniform_array(num::Shape shape, double bound, Rng& rng) {
  Array<T> a(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : a.storage()) v = static_cast<T>(u(rng));
  return a;
}

/// y = x W^T (+ b), W stored [out x in].
template <std::floating_point T>
struct Linear {
  Var<T> weight;
  std::optional<Var<T>> bias;

  /// Uniform in +-sqrt(1/in) for weight and bias.
  static Linear init(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    Linear l;
    l.weight = num::parameter(uniform_array<T>({out, in}, bound, rng));
    if (with_bias) l.bias = num::parameter(uniform_array<T>({out}, bound, rng));
    return l;
  }

  static Linear zeros(std::size_t in, std::size_t out, bool with_bias) {
    Linear l;
    l.weight = num::parameter(Array<T>({out, in}, T{0}));
    if (with_bias) l.bias = num::parameter(Array<T>({out}, T{0}));
    return l;
  }

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }

  Var<T> operator()(const Var<T>& x) const { return linear_forward(*this, x); }

  void collect(const std::string& prefix, Family f, ParamList<T>& out) const {
    out.add(prefix + ".weight", f, weight);
    if (bias) out.add(prefix + ".bias", f, *bias);
  }
};

template <std::floating_point T>
Var<T> linear_forward(const Linear<T>& layer, const Var<T>& x) {
  if (x.rank() == 0 || x.shape().back() != layer.in_dim()) {
    throw ShapeError("linear: last axis of input " + num::shape_string(x.shape()) +
                     " must equal in-dimension " + std::to_string(layer.in_dim()));
  }
  auto y = num::matmul(x, layer.weight, true);
  if (layer.bias) y = num::add(y, *layer.bias);
  return y;
}

/// Layer normalization over the last axis with learnable gain and shift.
template <std::floating_point T>
struct LayerNorm {
  Var<T> gain;
  Var<T> shift;

  static LayerNorm init(std::size_t width) {
    return {num::parameter(Array<T>({width}, T{1})), num::parameter(Array<T>({width}, T{0}))};
  }

  Var<T> operator()(const Var<T>& x) const {
    return num::add(num::mul(num::layer_norm(x), gain), shift);
  }

  void collect(const std::string& prefix, Family f, ParamList<T>& out) const {
    out.add(prefix + ".gain", f, gain);
    out.add(prefix + ".shift", f, shift);
  }
};

enum class Activation { kSilu, kTanh };

template <std::floating_point T>
Var<T> activate(Activation a, const Var<T>& x) {
  return a == Activation::kSilu ? num::silu(x) : num::tanh(x);
}

/// Feed-forward stack; the activation follows every layer but the last.
template <std::floating_point T>
struct Mlp {
  std::vector<Linear<T>> layers;
  Activation activation = Activation::kSilu;

  static Mlp init(const std::vector<std::size_t>& widths, Activation act, Rng& rng) {
    if (widths.size() < 2) throw ContractError("Mlp: need at least input and output widths");
    Mlp m;
    m.activation = act;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      m.layers.push_back(Linear<T>::init(widths[i], widths[i + 1], true, rng));
    return m;
  }

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i](h);
      if (i + 1 < layers.size()) h = activate(activation, h);
    }
    return h;
  }

  /// Output of the last hidden layer (after its activation).
  Var<T> penultimate(const Var<T>& x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) h = activate(activation, layers[i](h));
    return h;
  }

  void collect(const std::string& prefix, Family f, ParamList<T>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(prefix + "." + std::to_string(i), f, out);
  }
};

}  // namespace pkfr::nn
