#pragma once

#include <cmath>

#include "pkfr/nn/layers.hpp"

namespace pkfr::nn {

/// Multi-head scaled dot-product attention projections.
template <std::floating_point T>
struct AttentionParams {
  Linear<T> query, key, value, output;
  std::size_t head_count = 1;
  std::size_t head_dim = 1;

  static AttentionParams init(std::size_t width, std::size_t heads, Rng& rng) {
    if (heads == 0 || width % heads != 0) {
      throw ContractError("attention: width " + std::to_string(width) +
                          " not divisible by head count " + std::to_string(heads));
    }
    AttentionParams p;
    p.query = Linear<T>::init(width, width, true, rng);
    p.key = Linear<T>::init(width, width, true, rng);
    p.value = Linear<T>::init(width, width, true, rng);
    p.output = Linear<T>::init(width, width, true, rng);
    p.head_count = heads;
    p.head_dim = width / heads;
    return p;
  }

  std::size_t width() const { return head_count * head_dim; }

  void collect(const std::string& prefix, Family f, ParamList<T>& out) const {
    query.collect(prefix + ".query", f, out);
    key.collect(prefix + ".key", f, out);
    value.collect(prefix + ".value", f, out);
    output.collect(prefix + ".output", f, out);
  }
};

namespace detail {

// [B, n, W] -> [B, heads, n, d]
template <std::floating_point T>
Var<T> split_heads(const Var<T>& x, std::size_t heads, std::size_t d) {
  const std::size_t b = x.dim(0), n = x.dim(1);
  return num::transpose(num::reshape(x, {b, n, heads, d}), 1, 2);
}

template <std::floating_point T>
void check_attention_shapes(const AttentionParams<T>& p, const Var<T>& q, const Var<T>& m) {
  const std::size_t w = p.width();
  if (q.rank() != 3 || m.rank() != 3) {
    throw ShapeError("cross_attention: expected [batch, tokens, width] operands, got " +
                     num::shape_string(q.shape()) + " and " + num::shape_string(m.shape()));
  }
  if (q.dim(2) != w || m.dim(2) != w) {
    throw ShapeError("cross_attention: axis -1 of queries " + num::shape_string(q.shape()) +
                     " and memory " + num::shape_string(m.shape()) + " must equal width " +
                     std::to_string(w));
  }
  if (q.dim(0) != m.dim(0)) {
    throw ShapeError("cross_attention: batch axis 0 differs between queries and memory");
  }
}

template <std::floating_point T>
Var<T> with_batch(const Var<T>& x) {
  if (x.rank() != 2) return x;
  return num::reshape(x, {1, x.dim(0), x.dim(1)});
}

}  // namespace detail

/// Softmax attention weights [B, heads, q, m]; exposed for inspection.
template <std::floating_point T>
Var<T> attention_weights(const AttentionParams<T>& p, const Var<T>& queries, const Var<T>& memory) {
  const auto q = detail::with_batch(queries);
  const auto m = detail::with_batch(memory);
  detail::check_attention_shapes(p, q, m);
  const auto qh = detail::split_heads(p.query(q), p.head_count, p.head_dim);
  const auto kh = detail::split_heads(p.key(m), p.head_count, p.head_dim);
  const T scale = T{1} / std::sqrt(static_cast<T>(p.head_dim));
  return num::softmax(num::scale(num::matmul(qh, kh, true), scale));
}

/// Queries attend over memory; heads are concatenated and output-projected.
/// The residual connection is left to the caller.
template <std::floating_point T>
Var<T> cross_attention(const AttentionParams<T>& p, const Var<T>& queries, const Var<T>& memory) {
  const bool unbatched = queries.rank() == 2;
  const auto q = detail::with_batch(queries);
  const auto m = detail::with_batch(memory);
  detail::check_attention_shapes(p, q, m);
  const std::size_t b = q.dim(0), nq = q.dim(1);
  const auto probs = attention_weights(p, q, m);
  const auto vh = detail::split_heads(p.value(m), p.head_count, p.head_dim);
  auto ctx = num::matmul(probs, vh);  // [B, heads, q, d]
  ctx = num::reshape(num::transpose(ctx, 1, 2), {b, nq, p.width()});
  auto out = p.output(ctx);
  if (unbatched) out = num::reshape(out, {nq, p.width()});
  return out;
}

}  // namespace pkfr::nn
