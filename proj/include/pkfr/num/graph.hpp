#pragma once

// Define-by-run reverse-mode automatic differentiation over Array<T>.
//
// Every primitive evaluates eagerly and records a Node holding its inputs and
// output. backward() walks the graph reachable from a scalar loss in reverse
// topological order and returns gradients in a map owned by the caller, so
// leaf nodes shared between concurrent graphs are never written to.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pkfr/num/array.hpp"
#include "pkfr/num/errors.hpp"

namespace pkfr::num {

enum class OpKind : int {
  kLeaf = 0,
  kMatmul,
  kAdd,
  kSubtract,
  kMultiply,
  kConcat,
  kSplit,
  kReshape,
  kTranspose,
  kSoftmax,
  kLayerNorm,
  kSilu,
  kTanh,
  kExp,
  kLog,
  kSquare,
  kMean,
  kSum,
  kClip,
  kMaxScalar,
  kCustomUnary,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSubtract: return "subtract";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kConcat: return "concat";
    case OpKind::kSplit: return "split";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kSilu: return "silu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSquare: return "square";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kClip: return "clip";
    case OpKind::kMaxScalar: return "max_scalar";
    case OpKind::kCustomUnary: return "custom_unary";
  }
  return "unknown";
}

/// Epsilon inside the square root of layer normalization.
inline constexpr double kLayerNormEps = 1e-5;

/// Scan every primitive output for NaN/Inf when the inputs were finite.
inline bool& finite_checks() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

template <std::floating_point T>
struct OpAttrs {
  double lo = 0.0;  // clip lower bound, max_scalar threshold, layer-norm eps
  double hi = 0.0;  // clip upper bound
  std::size_t begin = 0, end = 0;  // split range on the last axis
  int axis_a = -2, axis_b = -1;    // transpose
  Shape shape;                     // reshape target
  bool trans_b = false;            // matmul: use the second operand transposed
  bool last_axis = false;          // mean/sum: reduce the last axis only
  std::function<T(T)> fn, dfn;     // custom unary forward and derivative
};

template <std::floating_point T>
struct Node {
  OpKind kind = OpKind::kLeaf;
  std::vector<std::shared_ptr<Node>> inputs;
  Array<T> value;
  OpAttrs<T> attrs;
  bool requires_grad = false;
  std::vector<T> aux;  // per-op cache (layer-norm inverse std)
};

/// Handle to a graph node. Copies share the node.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Array<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(int axis) const { return node_->value.dim(axis); }
  std::size_t rank() const { return node_->value.rank(); }
  OpKind kind() const { return node_->kind; }
  bool is_leaf() const { return node_->kind == OpKind::kLeaf; }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  /// Leaves only: in-place access for optimizers and perturbation checks.
  Array<T>& mutable_value() {
    if (!is_leaf()) throw ContractError("mutable_value on a non-leaf node");
    return node_->value;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <std::floating_point T>
Var<T> leaf(Array<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->kind = OpKind::kLeaf;
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var<T>(std::move(n));
}

template <std::floating_point T>
Var<T> parameter(Array<T> value) {
  return leaf(std::move(value), true);
}

template <std::floating_point T>
Var<T> constant(Array<T> value) {
  return leaf(std::move(value), false);
}

template <std::floating_point T>
Var<T> detach(const Var<T>& x) {
  return constant(x.value());
}

namespace detail {

template <std::floating_point T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                                        " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// ---------------------------------------------------------------------------
// broadcasting

struct Broadcast {
  enum class Mode { kSame, kScalarB, kScalarA, kSuffixB, kSuffixA, kGeneral };
  Mode mode = Mode::kSame;
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // general mode, per output axis
  std::size_t na = 1, nb = 1;
};

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  bc.na = shape_size(a);
  bc.nb = shape_size(b);
  if (a == b) {
    bc.mode = Broadcast::Mode::kSame;
    bc.out = a;
    return bc;
  }
  if (bc.nb == 1 && b.size() <= a.size()) {
    bc.mode = Broadcast::Mode::kScalarB;
    bc.out = a;
    return bc;
  }
  if (bc.na == 1 && a.size() <= b.size()) {
    bc.mode = Broadcast::Mode::kScalarA;
    bc.out = b;
    return bc;
  }
  if (is_suffix(b, a)) {
    bc.mode = Broadcast::Mode::kSuffixB;
    bc.out = a;
    return bc;
  }
  if (is_suffix(a, b)) {
    bc.mode = Broadcast::Mode::kSuffixA;
    bc.out = b;
    return bc;
  }
  bc.mode = Broadcast::Mode::kGeneral;
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<long>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<long>(r - b.size()));
  bc.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b) + " (axis " + std::to_string(i) + ": " +
                       std::to_string(pa[i]) + " vs " + std::to_string(pb[i]) + ")");
    }
    bc.out[i] = std::max(pa[i], pb[i]);
  }
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = r; i-- > 0;) {
    bc.stride_a[i] = pa[i] == 1 ? 0 : sa;
    bc.stride_b[i] = pb[i] == 1 ? 0 : sb;
    sa *= pa[i];
    sb *= pb[i];
  }
  return bc;
}

/// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void visit_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t n = shape_size(bc.out);
  switch (bc.mode) {
    case Broadcast::Mode::kSame:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    case Broadcast::Mode::kScalarB:
      for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
      return;
    case Broadcast::Mode::kScalarA:
      for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
      return;
    case Broadcast::Mode::kSuffixB:
      for (std::size_t o = 0; o < n; o += bc.nb)
        for (std::size_t j = 0; j < bc.nb; ++j) f(o + j, o + j, j);
      return;
    case Broadcast::Mode::kSuffixA:
      for (std::size_t o = 0; o < n; o += bc.na)
        for (std::size_t j = 0; j < bc.na; ++j) f(o + j, j, o + j);
      return;
    case Broadcast::Mode::kGeneral: {
      // The innermost axis runs as a flat loop; the outer axes step an odometer.
      const std::size_t r = bc.out.size();
      const std::size_t inner = bc.out[r - 1], sa = bc.stride_a[r - 1], sb = bc.stride_b[r - 1];
      std::vector<std::size_t> idx(r, 0);
      std::size_t ia = 0, ib = 0;
      for (std::size_t i = 0; i < n; i += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j * sa, ib + j * sb);
        for (std::size_t ax = r - 1; ax-- > 0;) {
          ++idx[ax];
          ia += bc.stride_a[ax];
          ib += bc.stride_b[ax];
          if (idx[ax] < bc.out[ax]) break;
          ia -= bc.stride_a[ax] * idx[ax];
          ib -= bc.stride_b[ax] * idx[ax];
          idx[ax] = 0;
        }
      }
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// matmul

struct MatmulPlan {
  std::size_t batch = 1;  // number of independent products
  std::size_t m = 0, k = 0, n = 0;
  bool shared_b = true;   // b is a single matrix used for every batch
  Shape out;
};

inline MatmulPlan plan_matmul(const Shape& a, const Shape& b, bool trans_b) {
  MatmulPlan p;
  if (a.empty() || b.size() < 2) {
    throw ShapeError("matmul: operands must be rank>=1 and rank>=2, got " + shape_string(a) +
                     " and " + shape_string(b));
  }
  const std::size_t bk = trans_b ? b[b.size() - 1] : b[b.size() - 2];
  const std::size_t bn = trans_b ? b[b.size() - 2] : b[b.size() - 1];
  p.k = a.back();
  p.n = bn;
  if (p.k != bk) {
    throw ShapeError("matmul: contraction mismatch, axis -1 of " + shape_string(a) + " is " +
                     std::to_string(p.k) + " but axis " + (trans_b ? "-1" : "-2") + " of " +
                     shape_string(b) + " is " + std::to_string(bk));
  }
  if (b.size() == 2) {
    p.shared_b = true;
    p.batch = 1;
    p.m = shape_size(a) / p.k;
    p.out = a;
    p.out.back() = p.n;
    return p;
  }
  if (a.size() != b.size() || !std::equal(a.begin(), a.end() - 2, b.begin())) {
    throw ShapeError("matmul: batched operands need equal leading axes, got " + shape_string(a) +
                     " and " + shape_string(b));
  }
  p.shared_b = false;
  p.m = a[a.size() - 2];
  p.batch = shape_size(a) / (p.m * p.k);
  p.out = a;
  p.out.back() = p.n;
  return p;
}

// Below this many multiply-adds the blocked GEMM setup costs more than the product.
inline constexpr std::size_t kLazyProductWork = 8192;

/// C (+)= X * Y, dispatching tiny products to coefficient-based evaluation.
template <class Dst, class X, class Y>
void product_into(Dst&& c, const X& x, const Y& y, bool accumulate) {
  const auto work = static_cast<std::size_t>(x.rows()) * static_cast<std::size_t>(x.cols()) *
                    static_cast<std::size_t>(y.cols());
  if (work <= kLazyProductWork) {
    if (accumulate) c.noalias() += x.lazyProduct(y);
    else c.noalias() = x.lazyProduct(y);
  } else {
    if (accumulate) c.noalias() += x * y;
    else c.noalias() = x * y;
  }
}

template <std::floating_point T>
void matmul_forward(const MatmulPlan& p, bool trans_b, const T* a, const T* b, T* c) {
  using Mat = RowMat<T>;
  const long m = static_cast<long>(p.m), k = static_cast<long>(p.k), n = static_cast<long>(p.n);
  for (std::size_t s = 0; s < p.batch; ++s) {
    Eigen::Map<const Mat> A(a + s * p.m * p.k, m, k);
    const T* bp = p.shared_b ? b : b + s * p.k * p.n;
    Eigen::Map<Mat> C(c + s * p.m * p.n, m, n);
    if (trans_b) {
      product_into(C, A, Eigen::Map<const Mat>(bp, n, k).transpose(), false);
    } else {
      product_into(C, A, Eigen::Map<const Mat>(bp, k, n), false);
    }
  }
}

template <std::floating_point T>
void matmul_backward(const MatmulPlan& p, bool trans_b, const T* a, const T* b, const T* gc,
                     T* ga, T* gb) {
  using Mat = RowMat<T>;
  const long m = static_cast<long>(p.m), k = static_cast<long>(p.k), n = static_cast<long>(p.n);
  for (std::size_t s = 0; s < p.batch; ++s) {
    Eigen::Map<const Mat> A(a + s * p.m * p.k, m, k);
    Eigen::Map<const Mat> G(gc + s * p.m * p.n, m, n);
    const std::size_t boff = p.shared_b ? 0 : s * p.k * p.n;
    if (trans_b) {
      Eigen::Map<const Mat> B(b + boff, n, k);
      if (ga) product_into(Eigen::Map<Mat>(ga + s * p.m * p.k, m, k), G, B, true);
      if (gb) product_into(Eigen::Map<Mat>(gb + boff, n, k), G.transpose(), A, true);
    } else {
      Eigen::Map<const Mat> B(b + boff, k, n);
      if (ga) product_into(Eigen::Map<Mat>(ga + s * p.m * p.k, m, k), G, B.transpose(), true);
      if (gb) product_into(Eigen::Map<Mat>(gb + boff, k, n), A.transpose(), G, true);
    }
  }
}

// ---------------------------------------------------------------------------
// transpose of two arbitrary axes

struct TransposePlan {
  Shape in, out;
  std::vector<std::size_t> in_strides_for_out;  // input stride per output axis
};

inline TransposePlan plan_transpose(const Shape& in, std::size_t a, std::size_t b) {
  TransposePlan p;
  p.in = in;
  p.out = in;
  std::swap(p.out[a], p.out[b]);
  std::vector<std::size_t> st(in.size(), 1);
  for (std::size_t i = in.size(); i-- > 1;) st[i - 1] = st[i] * in[i];
  p.in_strides_for_out = st;
  std::swap(p.in_strides_for_out[a], p.in_strides_for_out[b]);
  return p;
}

/// out[o] = in[map(o)] (forward) or in_grad[map(o)] += out_grad[o] (backward).
template <class F>
void visit_transpose(const TransposePlan& p, F&& f) {
  const std::size_t r = p.out.size();
  const std::size_t n = shape_size(p.out);
  if (n == 0) return;
  const std::size_t inner = p.out[r - 1], step = p.in_strides_for_out[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, src + j * step);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      src += p.in_strides_for_out[ax];
      if (idx[ax] < p.out[ax]) break;
      src -= p.in_strides_for_out[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

template <std::floating_point T>
T sigmoid(T x) {
  return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <std::floating_point T>
void reduce_broadcast_grad(const Broadcast& bc, const Array<T>& g, std::vector<T>& ga,
                           std::vector<T>& gb, bool want_a, bool want_b, T sign_b,
                           const Array<T>* mul_a, const Array<T>* mul_b) {
  // For add/sub: ga += g, gb += sign_b * g. For multiply: ga += g*b, gb += g*a.
  visit_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    const T go = g[o];
    if (want_a) ga[ia] += mul_b ? go * (*mul_b)[ib] : go;
    if (want_b) gb[ib] += mul_a ? go * (*mul_a)[ia] : sign_b * go;
  });
}

// ---------------------------------------------------------------------------
// forward evaluation

template <std::floating_point T>
Array<T> eval_forward(Node<T>& node) {
  const auto& in = node.inputs;
  const auto& at = node.attrs;
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(node.kind)) + ": expected " + std::to_string(n) +
                       " inputs, got " + std::to_string(in.size()));
    }
  };
  auto unary = [&](auto&& f) {
    arity(1);
    const Array<T>& x = in[0]->value;
    Array<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return y;
  };

  switch (node.kind) {
    case OpKind::kMatmul: {
      arity(2);
      const auto p = plan_matmul(in[0]->value.shape(), in[1]->value.shape(), at.trans_b);
      Shape out = p.out;
      if (in[0]->value.rank() == 1) out = Shape{p.n};
      Array<T> y(out);
      matmul_forward(p, at.trans_b, in[0]->value.data().data(), in[1]->value.data().data(),
                     y.data().data());
      return y;
    }
    case OpKind::kAdd:
    case OpKind::kSubtract:
    case OpKind::kMultiply: {
      arity(2);
      const Array<T>& a = in[0]->value;
      const Array<T>& b = in[1]->value;
      const auto bc = plan_broadcast(a.shape(), b.shape(), op_name(node.kind));
      Array<T> y(bc.out);
      if (node.kind == OpKind::kAdd) {
        visit_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { y[o] = a[ia] + b[ib]; });
      } else if (node.kind == OpKind::kSubtract) {
        visit_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { y[o] = a[ia] - b[ib]; });
      } else {
        visit_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { y[o] = a[ia] * b[ib]; });
      }
      return y;
    }
    case OpKind::kConcat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      const Shape& s0 = in[0]->value.shape();
      if (s0.empty()) throw ShapeError("concat: rank-0 input");
      std::size_t total = 0;
      for (std::size_t j = 0; j < in.size(); ++j) {
        const Shape& s = in[j]->value.shape();
        if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) {
          throw ShapeError("concat: input " + std::to_string(j) + " shape " + shape_string(s) +
                           " differs from " + shape_string(s0) + " outside axis -1");
        }
        total += s.back();
      }
      Shape out = s0;
      out.back() = total;
      Array<T> y(out);
      const std::size_t rows = shape_size(s0) / s0.back();
      std::size_t off = 0;
      for (const auto& x : in) {
        const std::size_t w = x->value.shape().back();
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(x->value.data().data() + r * w, w, y.data().data() + r * total + off);
        }
        off += w;
      }
      return y;
    }
    case OpKind::kSplit: {
      arity(1);
      const Array<T>& x = in[0]->value;
      if (x.rank() == 0) throw ShapeError("split: rank-0 input");
      const std::size_t w = x.shape().back();
      if (at.begin >= at.end || at.end > w) {
        throw ShapeError("split: range [" + std::to_string(at.begin) + "," + std::to_string(at.end) +
                         ") invalid for axis -1 of length " + std::to_string(w));
      }
      Shape out = x.shape();
      out.back() = at.end - at.begin;
      Array<T> y(out);
      const std::size_t rows = x.size() / w, ow = out.back();
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.data().data() + r * w + at.begin, ow, y.data().data() + r * ow);
      }
      return y;
    }
    case OpKind::kReshape: {
      arity(1);
      return in[0]->value.reshaped(at.shape);
    }
    case OpKind::kTranspose: {
      arity(1);
      const Array<T>& x = in[0]->value;
      const auto a = norm_axis(at.axis_a, x.rank(), "transpose");
      const auto b = norm_axis(at.axis_b, x.rank(), "transpose");
      const auto p = plan_transpose(x.shape(), a, b);
      Array<T> y(p.out);
      visit_transpose(p, [&](std::size_t o, std::size_t s) { y[o] = x[s]; });
      return y;
    }
    case OpKind::kSoftmax: {
      arity(1);
      const Array<T>& x = in[0]->value;
      if (x.rank() == 0) throw ShapeError("softmax: rank-0 input");
      const std::size_t w = x.shape().back(), rows = x.size() / w;
      Array<T> y(x.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * w;
        T* yr = y.data().data() + r * w;
        T mx = *std::max_element(xr, xr + w);
        T s{0};
        for (std::size_t j = 0; j < w; ++j) {
          yr[j] = std::exp(xr[j] - mx);
          s += yr[j];
        }
        for (std::size_t j = 0; j < w; ++j) yr[j] /= s;
      }
      return y;
    }
    case OpKind::kLayerNorm: {
      arity(1);
      const Array<T>& x = in[0]->value;
      if (x.rank() == 0) throw ShapeError("layer_norm: rank-0 input");
      const std::size_t w = x.shape().back(), rows = x.size() / w;
      Array<T> y(x.shape());
      node.aux.assign(rows, T{0});
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * w;
        T* yr = y.data().data() + r * w;
        T mu{0};
        for (std::size_t j = 0; j < w; ++j) mu += xr[j];
        mu /= static_cast<T>(w);
        T var{0};
        for (std::size_t j = 0; j < w; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(w);
        const T inv = T{1} / std::sqrt(var + static_cast<T>(at.lo));
        node.aux[r] = inv;
        for (std::size_t j = 0; j < w; ++j) yr[j] = (xr[j] - mu) * inv;
      }
      return y;
    }
    case OpKind::kSilu: return unary([](T v) { return v * sigmoid(v); });
    case OpKind::kTanh: return unary([](T v) { return std::tanh(v); });
    case OpKind::kExp: return unary([](T v) { return std::exp(v); });
    case OpKind::kLog: return unary([](T v) { return std::log(v); });
    case OpKind::kSquare: return unary([](T v) { return v * v; });
    case OpKind::kClip: {
      const T lo = static_cast<T>(at.lo), hi = static_cast<T>(at.hi);
      if (!(lo <= hi)) throw ContractError("clip: lower bound exceeds upper bound");
      return unary([&](T v) { return std::clamp(v, lo, hi); });
    }
    case OpKind::kMaxScalar: {
      const T s = static_cast<T>(at.lo);
      return unary([&](T v) { return v > s ? v : s; });
    }
    case OpKind::kCustomUnary: {
      if (!at.fn || !at.dfn) throw ContractError("custom_unary: missing function");
      return unary(at.fn);
    }
    case OpKind::kMean:
    case OpKind::kSum: {
      arity(1);
      const Array<T>& x = in[0]->value;
      const bool mean = node.kind == OpKind::kMean;
      if (at.last_axis) {
        if (x.rank() == 0) throw ShapeError(std::string(op_name(node.kind)) + ": rank-0 input");
        const std::size_t w = x.shape().back(), rows = x.size() / w;
        Shape out(x.shape().begin(), x.shape().end() - 1);
        Array<T> y(out);
        for (std::size_t r = 0; r < rows; ++r) {
          T s{0};
          for (std::size_t j = 0; j < w; ++j) s += x[r * w + j];
          y[r] = mean ? s / static_cast<T>(w) : s;
        }
        return y;
      }
      T s{0};
      for (T v : x.data()) s += v;
      return Array<T>::scalar(mean ? s / static_cast<T>(x.size()) : s);
    }
    case OpKind::kLeaf:
      throw ContractError("leaf nodes are created with leaf(), not apply_primitive");
  }
  throw UnsupportedOpError("apply_primitive: unsupported op kind " +
                           std::to_string(static_cast<int>(node.kind)));
}

// ---------------------------------------------------------------------------
// backward: accumulate input gradients of one node given its output gradient

template <std::floating_point T>
void eval_backward(const Node<T>& node, const Array<T>& g, std::vector<Array<T>*>& gin) {
  const auto& in = node.inputs;
  const auto& at = node.attrs;
  auto want = [&](std::size_t i) { return gin[i] != nullptr; };
  auto unary_grad = [&](auto&& df) {  // df(x, y) -> dy/dx
    if (!want(0)) return;
    const Array<T>& x = in[0]->value;
    auto& gx = gin[0]->storage();
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], node.value[i]);
  };

  switch (node.kind) {
    case OpKind::kLeaf:
      return;
    case OpKind::kMatmul: {
      const auto p = plan_matmul(in[0]->value.shape(), in[1]->value.shape(), at.trans_b);
      matmul_backward(p, at.trans_b, in[0]->value.data().data(), in[1]->value.data().data(),
                      g.data().data(), want(0) ? gin[0]->data().data() : nullptr,
                      want(1) ? gin[1]->data().data() : nullptr);
      return;
    }
    case OpKind::kAdd:
    case OpKind::kSubtract:
    case OpKind::kMultiply: {
      const Array<T>& a = in[0]->value;
      const Array<T>& b = in[1]->value;
      const auto bc = plan_broadcast(a.shape(), b.shape(), op_name(node.kind));
      std::vector<T> dummy;
      auto& ga = want(0) ? gin[0]->storage() : dummy;
      auto& gb = want(1) ? gin[1]->storage() : dummy;
      if (node.kind == OpKind::kMultiply) {
        reduce_broadcast_grad(bc, g, ga, gb, want(0), want(1), T{1}, &a, &b);
      } else {
        const T sign = node.kind == OpKind::kAdd ? T{1} : T{-1};
        reduce_broadcast_grad<T>(bc, g, ga, gb, want(0), want(1), sign, nullptr, nullptr);
      }
      return;
    }
    case OpKind::kConcat: {
      const std::size_t total = node.value.shape().back();
      const std::size_t rows = node.value.size() / total;
      std::size_t off = 0;
      for (std::size_t j = 0; j < in.size(); ++j) {
        const std::size_t w = in[j]->value.shape().back();
        if (want(j)) {
          auto& gx = gin[j]->storage();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) gx[r * w + c] += g[r * total + off + c];
        }
        off += w;
      }
      return;
    }
    case OpKind::kSplit: {
      if (!want(0)) return;
      const std::size_t w = in[0]->value.shape().back();
      const std::size_t ow = at.end - at.begin, rows = g.size() / ow;
      auto& gx = gin[0]->storage();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ow; ++c) gx[r * w + at.begin + c] += g[r * ow + c];
      return;
    }
    case OpKind::kReshape: {
      if (!want(0)) return;
      auto& gx = gin[0]->storage();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      return;
    }
    case OpKind::kTranspose: {
      if (!want(0)) return;
      const Array<T>& x = in[0]->value;
      const auto a = norm_axis(at.axis_a, x.rank(), "transpose");
      const auto b = norm_axis(at.axis_b, x.rank(), "transpose");
      const auto p = plan_transpose(x.shape(), a, b);
      auto& gx = gin[0]->storage();
      visit_transpose(p, [&](std::size_t o, std::size_t s) { gx[s] += g[o]; });
      return;
    }
    case OpKind::kSoftmax: {
      if (!want(0)) return;
      const Array<T>& y = node.value;
      const std::size_t w = y.shape().back(), rows = y.size() / w;
      auto& gx = gin[0]->storage();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot{0};
        for (std::size_t j = 0; j < w; ++j) dot += g[r * w + j] * y[r * w + j];
        for (std::size_t j = 0; j < w; ++j) gx[r * w + j] += y[r * w + j] * (g[r * w + j] - dot);
      }
      return;
    }
    case OpKind::kLayerNorm: {
      if (!want(0)) return;
      const Array<T>& y = node.value;  // normalized values
      const std::size_t w = y.shape().back(), rows = y.size() / w;
      auto& gx = gin[0]->storage();
      const T inv_w = T{1} / static_cast<T>(w);
      for (std::size_t r = 0; r < rows; ++r) {
        T mg{0}, mgy{0};
        for (std::size_t j = 0; j < w; ++j) {
          mg += g[r * w + j];
          mgy += g[r * w + j] * y[r * w + j];
        }
        mg *= inv_w;
        mgy *= inv_w;
        const T inv = node.aux[r];
        for (std::size_t j = 0; j < w; ++j)
          gx[r * w + j] += inv * (g[r * w + j] - mg - y[r * w + j] * mgy);
      }
      return;
    }
    case OpKind::kSilu:
      unary_grad([](T x, T) {
        const T s = sigmoid(x);
        return s * (T{1} + x * (T{1} - s));
      });
      return;
    case OpKind::kTanh: unary_grad([](T, T y) { return T{1} - y * y; }); return;
    case OpKind::kExp: unary_grad([](T, T y) { return y; }); return;
    case OpKind::kLog: unary_grad([](T x, T) { return T{1} / x; }); return;
    case OpKind::kSquare: unary_grad([](T x, T) { return T{2} * x; }); return;
    case OpKind::kClip: {
      const T lo = static_cast<T>(at.lo), hi = static_cast<T>(at.hi);
      unary_grad([&](T x, T) { return (x >= lo && x <= hi) ? T{1} : T{0}; });
      return;
    }
    case OpKind::kMaxScalar: {
      const T s = static_cast<T>(at.lo);
      unary_grad([&](T x, T) { return x > s ? T{1} : T{0}; });
      return;
    }
    case OpKind::kCustomUnary:
      unary_grad([&](T x, T) { return at.dfn(x); });
      return;
    case OpKind::kMean:
    case OpKind::kSum: {
      if (!want(0)) return;
      const Array<T>& x = in[0]->value;
      auto& gx = gin[0]->storage();
      const bool mean = node.kind == OpKind::kMean;
      if (at.last_axis) {
        const std::size_t w = x.shape().back(), rows = x.size() / w;
        const T scale = mean ? T{1} / static_cast<T>(w) : T{1};
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) gx[r * w + j] += g[r] * scale;
      } else {
        const T v = mean ? g[0] / static_cast<T>(x.size()) : g[0];
        for (auto& e : gx) e += v;
      }
      return;
    }
  }
  throw UnsupportedOpError("backward: unsupported op kind");
}

inline bool known_kind(OpKind k) {
  const int v = static_cast<int>(k);
  return v > static_cast<int>(OpKind::kLeaf) && v <= static_cast<int>(OpKind::kCustomUnary);
}

}  // namespace detail

/// Records one primitive application and evaluates its output.
template <std::floating_point T>
Var<T> apply_primitive(OpKind kind, std::vector<Var<T>> inputs, OpAttrs<T> attrs = {}) {
  if (!detail::known_kind(kind)) {
    throw UnsupportedOpError("apply_primitive: unsupported op kind " +
                             std::to_string(static_cast<int>(kind)));
  }
  auto n = std::make_shared<Node<T>>();
  n->kind = kind;
  n->attrs = std::move(attrs);
  bool inputs_finite = true;
  for (auto& v : inputs) {
    if (!v.defined()) throw ContractError(std::string(op_name(kind)) + ": undefined input");
    n->requires_grad = n->requires_grad || v.requires_grad();
    if (finite_checks()) inputs_finite = inputs_finite && v.value().all_finite();
    n->inputs.push_back(v.ptr());
  }
  n->value = detail::eval_forward(*n);
  if (finite_checks() && inputs_finite && !n->value.all_finite()) {
    throw NumericError(std::string(op_name(kind)) + " produced a non-finite value from finite inputs");
  }
  return Var<T>(std::move(n));
}

/// Gradients of a scalar with respect to every node that was reachable from it.
template <std::floating_point T>
class Gradients {
 public:
  /// dLoss/dx; zeros when x was not reachable from the loss.
  Array<T> of(const Var<T>& x) const {
    auto it = grads_.find(x.node());
    if (it == grads_.end()) return Array<T>(x.shape(), T{0});
    return it->second;
  }
  bool reached(const Var<T>& x) const { return grads_.count(x.node()) > 0; }

 private:
  template <std::floating_point U>
  friend Gradients<U> backward(const Var<U>& loss);
  std::unordered_map<const Node<T>*, Array<T>> grads_;
};

template <std::floating_point T>
Gradients<T> backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<const Node<T>*> order;
  std::unordered_set<const Node<T>*> seen;
  std::vector<std::pair<const Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      const Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Gradients<T> out;
  auto& grads = out.grads_;
  grads.reserve(order.size());
  for (const Node<T>* n : order) grads.emplace(n, Array<T>(n->value.shape(), T{0}));
  grads.at(loss.node())[0] = T{1};

  std::vector<Array<T>*> gin;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node<T>* n = *it;
    if (n->inputs.empty()) continue;
    gin.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (n->inputs[i]->requires_grad) gin[i] = &grads.at(n->inputs[i].get());
    }
    detail::eval_backward(*n, grads.at(n), gin);
  }
  return out;
}

// ---------------------------------------------------------------------------
// primitive helpers

template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_b = false) {
  OpAttrs<T> at;
  at.trans_b = trans_b;
  return apply_primitive<T>(OpKind::kMatmul, {a, b}, std::move(at));
}

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return apply_primitive<T>(OpKind::kAdd, {a, b});
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return apply_primitive<T>(OpKind::kSubtract, {a, b});
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return apply_primitive<T>(OpKind::kMultiply, {a, b});
}

template <std::floating_point T>
Var<T> concat(std::vector<Var<T>> xs) {
  return apply_primitive<T>(OpKind::kConcat, std::move(xs));
}

/// Columns [begin, end) of the last axis.
template <std::floating_point T>
Var<T> slice_last(const Var<T>& x, std::size_t begin, std::size_t end) {
  OpAttrs<T> at;
  at.begin = begin;
  at.end = end;
  return apply_primitive<T>(OpKind::kSplit, {x}, std::move(at));
}

/// Splits the last axis into consecutive pieces of the given widths.
template <std::floating_point T>
std::vector<Var<T>> split(const Var<T>& x, const std::vector<std::size_t>& widths) {
  std::size_t total = 0;
  for (auto w : widths) total += w;
  if (x.rank() == 0 || total != x.shape().back()) {
    throw ShapeError("split: widths sum to " + std::to_string(total) + " but axis -1 of " +
                     shape_string(x.shape()) + " differs");
  }
  std::vector<Var<T>> out;
  std::size_t off = 0;
  for (auto w : widths) {
    out.push_back(slice_last(x, off, off + w));
    off += w;
  }
  return out;
}

template <std::floating_point T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  OpAttrs<T> at;
  at.shape = std::move(shape);
  return apply_primitive<T>(OpKind::kReshape, {x}, std::move(at));
}

template <std::floating_point T>
Var<T> transpose(const Var<T>& x, int axis_a = -2, int axis_b = -1) {
  OpAttrs<T> at;
  at.axis_a = axis_a;
  at.axis_b = axis_b;
  return apply_primitive<T>(OpKind::kTranspose, {x}, std::move(at));
}

template <std::floating_point T>
Var<T> softmax(const Var<T>& x) {
  return apply_primitive<T>(OpKind::kSoftmax, {x});
}

/// Normalizes the last axis to zero mean and unit variance (no affine).
template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, double eps = kLayerNormEps) {
  OpAttrs<T> at;
  at.lo = eps;
  return apply_primitive<T>(OpKind::kLayerNorm, {x}, std::move(at));
}

template <std::floating_point T>
Var<T> silu(const Var<T>& x) { return apply_primitive<T>(OpKind::kSilu, {x}); }
template <std::floating_point T>
Var<T> tanh(const Var<T>& x) { return apply_primitive<T>(OpKind::kTanh, {x}); }
template <std::floating_point T>
Var<T> exp(const Var<T>& x) { return apply_primitive<T>(OpKind::kExp, {x}); }
template <std::floating_point T>
Var<T> log(const Var<T>& x) { return apply_primitive<T>(OpKind::kLog, {x}); }
template <std::floating_point T>
Var<T> square(const Var<T>& x) { return apply_primitive<T>(OpKind::kSquare, {x}); }

template <std::floating_point T>
Var<T> mean(const Var<T>& x) { return apply_primitive<T>(OpKind::kMean, {x}); }

template <std::floating_point T>
Var<T> sum(const Var<T>& x) { return apply_primitive<T>(OpKind::kSum, {x}); }

template <std::floating_point T>
Var<T> sum_last(const Var<T>& x) {
  OpAttrs<T> at;
  at.last_axis = true;
  return apply_primitive<T>(OpKind::kSum, {x}, std::move(at));
}

template <std::floating_point T>
Var<T> mean_last(const Var<T>& x) {
  OpAttrs<T> at;
  at.last_axis = true;
  return apply_primitive<T>(OpKind::kMean, {x}, std::move(at));
}

template <std::floating_point T>
Var<T> clip(const Var<T>& x, double lo, double hi) {
  OpAttrs<T> at;
  at.lo = lo;
  at.hi = hi;
  return apply_primitive<T>(OpKind::kClip, {x}, std::move(at));
}

template <std::floating_point T>
Var<T> max_scalar(const Var<T>& x, double s) {
  OpAttrs<T> at;
  at.lo = s;
  return apply_primitive<T>(OpKind::kMaxScalar, {x}, std::move(at));
}

template <std::floating_point T>
Var<T> custom_unary(const Var<T>& x, std::function<T(T)> fn, std::function<T(T)> dfn) {
  OpAttrs<T> at;
  at.fn = std::move(fn);
  at.dfn = std::move(dfn);
  return apply_primitive<T>(OpKind::kCustomUnary, {x}, std::move(at));
}

template <std::floating_point T>
Var<T> scalar_const(T v) {
  return constant(Array<T>::scalar(v));
}

template <std::floating_point T>
Var<T> scale(const Var<T>& x, T s) { return mul(x, scalar_const(s)); }

template <std::floating_point T>
Var<T> add_scalar(const Var<T>& x, T s) { return add(x, scalar_const(s)); }

/// Elementwise minimum, written with primitives: a - max(a - b, 0).
template <std::floating_point T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  return sub(a, max_scalar(sub(a, b), 0.0));
}

template <std::floating_point T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <std::floating_point T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <std::floating_point T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <std::floating_point T>
Var<T> operator-(const Var<T>& a) { return scale(a, T{-1}); }

}  // namespace pkfr::num
