#ifndef MCGEN_TENSOR_HPP
#define MCGEN_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mcgen/common.hpp"
#include "mcgen/rng.hpp"

namespace mcgen {

// Thread-local autodiff switch. Ops record backward closures only while
// enabled; sampling and evaluation wrap themselves in NoGradGuard.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

template <typename Scalar>
struct TensorNode {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  const char* op = "";  // kernel id; empty for leaves
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(const std::vector<Scalar>& grad_out)> backward;

  void accumulate(std::span<const Scalar> g) {
    if (grad.empty()) grad.assign(value.size(), Scalar(0));
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), Scalar(0));
  }
};

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using Node = detail::TensorNode<Scalar>;

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<Scalar> data) {
    if (numel(shape) != static_cast<Index>(data.size())) {
      throw ShapeError("tensor: " + shape_str(shape) + " incompatible with " +
                       std::to_string(data.size()) + " values");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }
  static Tensor full(Shape shape, Scalar v) {
    std::vector<Scalar> d(static_cast<std::size_t>(numel(shape)), v);
    return from_data(std::move(shape), std::move(d));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return static_cast<Index>(node_->value.size()); }

  std::span<const Scalar> data() const { return node_->value; }
  // In-place mutation is reserved for optimizers and stat buffers; it must
  // never run while a recorded graph referencing this tensor is alive.
  std::span<Scalar> mutable_data() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }
  std::span<const Scalar> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  Scalar item() const {
    if (size() != 1) {
      throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    }
    return node_->value[0];
  }

  Tensor detach() const {
    auto t = from_data(shape(), std::vector<Scalar>(node_->value));
    return t;
  }

  std::shared_ptr<Node> node() const { return node_; }

  static Tensor make_op(Shape shape, std::vector<Scalar> value, const char* op,
                        std::vector<Tensor> inputs,
                        std::function<void(const std::vector<Scalar>&)> bwd) {
    Tensor out = from_data(std::move(shape), std::move(value));
    bool rec = grad_mode();
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (rec && any) {
      out.node_->requires_grad = true;
      out.node_->op = op;
      out.node_->inputs.reserve(inputs.size());
      for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
      out.node_->backward = std::move(bwd);
    }
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Visits each recorded node exactly
// once in reverse topological order; leaf grads accumulate across calls.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ValueError(
        "backward: loss is detached from every differentiable leaf");
  }
  using Node = detail::TensorNode<S>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; child order follows the op input order, so the
  // traversal is deterministic.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next].get();
      ++next;
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->accumulate(std::vector<S>{S(1)});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(n->grad);
    }
  }
}

// ---------------------------------------------------------------------------
// Broadcast machinery (singleton axes only, equal rank)
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else if (b[i] == 1) {
      out[i] = a[i];
    } else {
      throw ShapeError(std::string(op) + ": incompatible shapes " +
                       shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

// Row-major strides with 0 on axes broadcast up to `out`.
inline std::vector<Index> bcast_strides(const Shape& in, const Shape& out) {
  std::vector<Index> strides(in.size());
  Index s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i] = (in[i] == 1 && out[i] != 1) ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Walks every index of `out` in row-major order, handing the body the linear
// offsets into two broadcast operands.
template <typename Body>
void for_each_bcast2(const Shape& out, const std::vector<Index>& sa,
                     const std::vector<Index>& sb, Body&& body) {
  const std::size_t r = out.size();
  const Index total = numel(out);
  std::vector<Index> idx(r, 0);
  Index oa = 0, ob = 0;
  for (Index i = 0; i < total; ++i) {
    body(i, oa, ob);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

namespace detail {

// fwd(a, b) -> out; dfa/dfb give the partials as functions of (a, b, out).
template <typename S, typename F, typename Da, typename Db>
Tensor<S> binary_op(const char* name, const Tensor<S>& a, const Tensor<S>& b,
                    F&& fwd, Da&& dfa, Db&& dfb) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const Index total = numel(out_shape);
  std::vector<S> out(static_cast<std::size_t>(total));
  auto av = a.data();
  auto bv = b.data();
  if (a.shape() == b.shape()) {
    for (Index i = 0; i < total; ++i)
      out[static_cast<std::size_t>(i)] = fwd(av[static_cast<std::size_t>(i)],
                                             bv[static_cast<std::size_t>(i)]);
  } else {
    auto sa = bcast_strides(a.shape(), out_shape);
    auto sb = bcast_strides(b.shape(), out_shape);
    for_each_bcast2(out_shape, sa, sb, [&](Index i, Index oa, Index ob) {
      out[static_cast<std::size_t>(i)] =
          fwd(av[static_cast<std::size_t>(oa)], bv[static_cast<std::size_t>(ob)]);
    });
  }
  auto an = a.node();
  auto bn = b.node();
  Shape ash = a.shape(), bsh = b.shape();
  return Tensor<S>::make_op(
      out_shape, std::move(out), name, {a, b},
      [an, bn, ash, bsh, out_shape, dfa, dfb](const std::vector<S>& g) {
        const bool need_a = an->requires_grad;
        const bool need_b = bn->requires_grad;
        if (need_a) an->ensure_grad();
        if (need_b) bn->ensure_grad();
        auto sa = bcast_strides(ash, out_shape);
        auto sb = bcast_strides(bsh, out_shape);
        for_each_bcast2(out_shape, sa, sb, [&](Index i, Index oa, Index ob) {
          const S av = an->value[static_cast<std::size_t>(oa)];
          const S bv = bn->value[static_cast<std::size_t>(ob)];
          const S gi = g[static_cast<std::size_t>(i)];
          if (need_a) an->grad[static_cast<std::size_t>(oa)] += gi * dfa(av, bv);
          if (need_b) bn->grad[static_cast<std::size_t>(ob)] += gi * dfb(av, bv);
        });
      });
}

template <typename S, typename F, typename D>
Tensor<S> unary_op(const char* name, const Tensor<S>& x, F&& fwd, D&& dfx) {
  const std::size_t n = static_cast<std::size_t>(x.size());
  std::vector<S> out(n);
  auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  auto xn = x.node();
  // dfx(x, y) with y the forward output, so tanh/sigmoid reuse it.
  std::vector<S> saved = out;
  return Tensor<S>::make_op(
      x.shape(), std::move(out), name, {x},
      [xn, saved = std::move(saved), dfx](const std::vector<S>& g) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          xn->grad[i] += g[i] * dfx(xn->value[i], saved[i]);
        }
      });
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}
template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      "div", a, b, [](S x, S y) { return x / y; },
      [](S, S y) { return S(1) / y; },
      [](S x, S y) { return -x / (y * y); });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return detail::unary_op(
      "add_scalar", x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}
template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return detail::unary_op(
      "mul_scalar", x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}
template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return mul_scalar(x, S(-1));
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return detail::unary_op(
      "exp", x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}
template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return detail::unary_op(
      "log", x, [](S v) { return std::log(v); },
      [](S v, S) { return S(1) / v; });
}
template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary_op(
      "relu", x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}
template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  return detail::unary_op(
      "tanh", x, [](S v) { return std::tanh(v); },
      [](S, S y) { return S(1) - y * y; });
}
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary_op(
      "sigmoid", x,
      [](S v) {
        // Split on sign for numerical stability.
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return detail::unary_op(
      "clamp", x,
      [lo, hi](S v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](S v, S) { return (v >= lo && v <= hi) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  if (numel(new_shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape) + " changes element count");
  }
  std::vector<S> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return Tensor<S>::make_op(std::move(new_shape), std::move(out), "reshape",
                            {x}, [xn](const std::vector<S>& g) {
                              xn->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i)
                                xn->grad[i] += g[i];
                            });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  if (xs.empty()) throw ValueError("concat: no inputs");
  const int r = xs[0].rank();
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  Shape out_shape = xs[0].shape();
  Index axis_total = 0;
  for (const auto& x : xs) {
    if (x.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && x.dim(i) != out_shape[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(xs[0].shape()));
      }
    }
    axis_total += x.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i)
    inner *= out_shape[static_cast<std::size_t>(i)];

  std::vector<S> out(static_cast<std::size_t>(numel(out_shape)));
  Index offset = 0;
  std::vector<Index> starts;
  for (const auto& x : xs) {
    starts.push_back(offset);
    const Index len = x.dim(axis);
    auto xv = x.data();
    for (Index o = 0; o < outer; ++o) {
      std::memcpy(&out[static_cast<std::size_t>((o * axis_total + offset) * inner)],
                  &xv[static_cast<std::size_t>(o * len * inner)],
                  static_cast<std::size_t>(len * inner) * sizeof(S));
    }
    offset += len;
  }
  std::vector<std::shared_ptr<detail::TensorNode<S>>> nodes;
  std::vector<Index> lens;
  for (const auto& x : xs) {
    nodes.push_back(x.node());
    lens.push_back(x.dim(axis));
  }
  return Tensor<S>::make_op(
      out_shape, std::move(out), "concat", xs,
      [nodes, lens, starts, outer, inner, axis_total](const std::vector<S>& g) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (!nodes[k]->requires_grad) continue;
          nodes[k]->ensure_grad();
          for (Index o = 0; o < outer; ++o) {
            const S* src =
                &g[static_cast<std::size_t>((o * axis_total + starts[k]) * inner)];
            S* dst = &nodes[k]->grad[static_cast<std::size_t>(o * lens[k] * inner)];
            for (Index i = 0; i < lens[k] * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index len) {
  const int r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range");
  const Index n = x.dim(axis);
  if (start < 0 || len < 0 || start + len > n) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for axis of size " +
                     std::to_string(n));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  std::vector<S> out(static_cast<std::size_t>(numel(out_shape)));
  auto xv = x.data();
  for (Index o = 0; o < outer; ++o) {
    std::memcpy(&out[static_cast<std::size_t>(o * len * inner)],
                &xv[static_cast<std::size_t>((o * n + start) * inner)],
                static_cast<std::size_t>(len * inner) * sizeof(S));
  }
  auto xn = x.node();
  return Tensor<S>::make_op(
      out_shape, std::move(out), "slice", {x},
      [xn, outer, inner, n, start, len](const std::vector<S>& g) {
        xn->ensure_grad();
        for (Index o = 0; o < outer; ++o) {
          const S* src = &g[static_cast<std::size_t>(o * len * inner)];
          S* dst = &xn->grad[static_cast<std::size_t>((o * n + start) * inner)];
          for (Index i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and softmax
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = S(0);
  for (S v : x.data()) total += v;
  auto xn = x.node();
  return Tensor<S>::make_op({1}, {total}, "sum", {x},
                            [xn](const std::vector<S>& g) {
                              xn->ensure_grad();
                              for (auto& gv : xn->grad) gv += g[0];
                            });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return mul_scalar(sum(x), S(1) / static_cast<S>(x.size()));
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x, int axis, bool keepdim = false) {
  const int r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError("sum: axis out of range");
  Index outer = 1, inner = 1;
  const Index n = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  Shape out_shape;
  for (int i = 0; i < r; ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.dim(i));
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<S> out(static_cast<std::size_t>(outer * inner), S(0));
  auto xv = x.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index k = 0; k < n; ++k) {
      const S* src = &xv[static_cast<std::size_t>((o * n + k) * inner)];
      S* dst = &out[static_cast<std::size_t>(o * inner)];
      for (Index i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  auto xn = x.node();
  return Tensor<S>::make_op(
      std::move(out_shape), std::move(out), "sum_axis", {x},
      [xn, outer, inner, n](const std::vector<S>& g) {
        xn->ensure_grad();
        for (Index o = 0; o < outer; ++o) {
          for (Index k = 0; k < n; ++k) {
            S* dst = &xn->grad[static_cast<std::size_t>((o * n + k) * inner)];
            const S* src = &g[static_cast<std::size_t>(o * inner)];
            for (Index i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x, int axis, bool keepdim = false) {
  return mul_scalar(sum(x, axis, keepdim), S(1) / static_cast<S>(x.dim(axis)));
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  const int r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError("softmax: axis out of range");
  Index outer = 1, inner = 1;
  const Index n = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  auto xv = x.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * n * inner + i;
      S m = xv[static_cast<std::size_t>(base)];
      for (Index k = 1; k < n; ++k)
        m = std::max(m, xv[static_cast<std::size_t>(base + k * inner)]);
      S z = S(0);
      for (Index k = 0; k < n; ++k) {
        S e = std::exp(xv[static_cast<std::size_t>(base + k * inner)] - m);
        out[static_cast<std::size_t>(base + k * inner)] = e;
        z += e;
      }
      for (Index k = 0; k < n; ++k)
        out[static_cast<std::size_t>(base + k * inner)] /= z;
    }
  }
  auto xn = x.node();
  std::vector<S> saved = out;
  return Tensor<S>::make_op(
      x.shape(), std::move(out), "softmax", {x},
      [xn, saved = std::move(saved), outer, inner, n](const std::vector<S>& g) {
        xn->ensure_grad();
        for (Index o = 0; o < outer; ++o) {
          for (Index i = 0; i < inner; ++i) {
            const Index base = o * n * inner + i;
            S dot = S(0);
            for (Index k = 0; k < n; ++k) {
              const auto idx = static_cast<std::size_t>(base + k * inner);
              dot += g[idx] * saved[idx];
            }
            for (Index k = 0; k < n; ++k) {
              const auto idx = static_cast<std::size_t>(base + k * inner);
              xn->grad[idx] += saved[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Random fills and small utilities
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> randn(Shape shape, RngStream& stream, double mean = 0.0,
                double stddev = 1.0) {
  std::vector<S> d(static_cast<std::size_t>(numel(shape)));
  for (auto& v : d) v = static_cast<S>(mean + stddev * stream.normal());
  return Tensor<S>::from_data(std::move(shape), std::move(d));
}

template <typename S>
Tensor<S> rand_uniform(Shape shape, RngStream& stream, double lo = 0.0,
                       double hi = 1.0) {
  std::vector<S> d(static_cast<std::size_t>(numel(shape)));
  for (auto& v : d) v = static_cast<S>(stream.uniform(lo, hi));
  return Tensor<S>::from_data(std::move(shape), std::move(d));
}

template <typename S>
bool all_finite(const Tensor<S>& x) {
  for (S v : x.data()) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[static_cast<std::size_t>(i)]) -
                             static_cast<double>(b.data()[static_cast<std::size_t>(i)])));
  }
  return m;
}

}  // namespace mcgen

#endif  // MCGEN_TENSOR_HPP
