#pragma once

#include "pkfr/nn/layers.hpp"

namespace pkfr::nn {

/// Gated feed-forward block whose gate and value branches are shifted by a
/// context vector: W5( SiLU(W3 x + C1 c) * (W4 x + C2 c) ).
template <std::floating_point T>
struct ConditionalSwiGLUParams {
  Linear<T> w3, w4, w5;
  Linear<T> c1, c2;  // bias-free, so a zero context gives plain SwiGLU

  /// C1 and C2 start at zero: training begins from the unconditioned block.
  static ConditionalSwiGLUParams init(std::size_t width, std::size_t hidden, std::size_t context,
                                      Rng& rng) {
    ConditionalSwiGLUParams p;
    p.w3 = Linear<T>::init(width, hidden, true, rng);
    p.w4 = Linear<T>::init(width, hidden, true, rng);
    p.w5 = Linear<T>::init(hidden, width, true, rng);
    p.c1 = Linear<T>::zeros(context, hidden, false);
    p.c2 = Linear<T>::zeros(context, hidden, false);
    return p;
  }

  std::size_t width() const { return w3.in_dim(); }
  std::size_t hidden() const { return w3.out_dim(); }
  std::size_t context_dim() const { return c1.in_dim(); }

  void collect(const std::string& prefix, Family f, ParamList<T>& out) const {
    w3.collect(prefix + ".w3", f, out);
    w4.collect(prefix + ".w4", f, out);
    w5.collect(prefix + ".w5", f, out);
    c1.collect(prefix + ".c1", f, out);
    c2.collect(prefix + ".c2", f, out);
  }
};

template <std::floating_point T>
Var<T> plain_swiglu(const ConditionalSwiGLUParams<T>& p, const Var<T>& x) {
  return p.w5(num::mul(num::silu(p.w3(x)), p.w4(x)));
}

/// x: [rows, width] with c: [context], or [batch, rows, width] with c: [batch, context].
template <std::floating_point T>
Var<T> conditional_swiglu(const ConditionalSwiGLUParams<T>& p, const Var<T>& x, const Var<T>& c) {
  if (c.rank() == 0 || c.shape().back() != p.context_dim()) {
    throw ShapeError("conditional_swiglu: context " + num::shape_string(c.shape()) +
                     " must have length " + std::to_string(p.context_dim()) + " on axis -1");
  }
  Var<T> m1 = p.c1(c);
  Var<T> m2 = p.c2(c);
  if (x.rank() == 3) {
    if (c.rank() != 2 || c.dim(0) != x.dim(0)) {
      throw ShapeError("conditional_swiglu: batched input " + num::shape_string(x.shape()) +
                       " needs context [batch, context], got " + num::shape_string(c.shape()));
    }
    m1 = num::reshape(m1, {x.dim(0), 1, p.hidden()});
    m2 = num::reshape(m2, {x.dim(0), 1, p.hidden()});
  } else if (c.rank() != 1) {
    throw ShapeError("conditional_swiglu: unbatched input needs a context vector");
  }
  const auto gate = num::silu(num::add(p.w3(x), m1));
  const auto value = num::add(p.w4(x), m2);
  return p.w5(num::mul(gate, value));
}

}  // namespace pkfr::nn
