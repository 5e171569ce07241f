#pragma once

// Differentiable op library.  Forward paths are eager; each op registers a
// backward closure with make_node.  Gradients accumulate (+=) so tensors can
// fan out to several consumers.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "blas.hpp"
#include "tensor.hpp"

namespace slt {

namespace detail {

template <typename S>
bool wants_grad(const std::shared_ptr<TensorNode<S>>& n) {
  return n->requires_grad;
}

// Strides of `in` laid over the broadcast output dims, 0 where broadcast.
inline Shape bcast_strides(const Shape& in, const Shape& out) {
  Shape st(out.size(), 0);
  Shape in_st = strides_of(in);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    st[off + i] = in[i] == 1 && out[off + i] != 1 ? 0 : in_st[i];
  return st;
}

// Visit output linear indices with matching offsets into two broadcast
// inputs.  f(out_idx, a_off, b_off).
template <typename F>
void bcast_visit(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  int64_t n = numel(out);
  size_t r = out.size();
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t o = 0; o < n; ++o) {
    f(o, oa, ob);
    for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
      auto ud = static_cast<size_t>(d);
      ++idx[ud];
      oa += sa[ud];
      ob += sb[ud];
      if (idx[ud] < out[ud]) break;
      oa -= sa[ud] * out[ud];
      ob -= sb[ud] * out[ud];
      idx[ud] = 0;
    }
  }
}

// Sum `go` (laid out as out_shape) down to in_shape (right-aligned, size-1
// dims were broadcast), accumulating into gin.
template <typename S>
void reduce_into(const std::vector<S>& go, const Shape& out_shape,
                 const Shape& in_shape, std::vector<S>& gin) {
  if (out_shape == in_shape) {
    for (size_t i = 0; i < go.size(); ++i) gin[i] += go[i];
    return;
  }
  Shape st = bcast_strides(in_shape, out_shape);
  Shape zero(out_shape.size(), 0);
  bcast_visit(out_shape, st, zero, [&](int64_t o, int64_t ia, int64_t) {
    gin[static_cast<size_t>(ia)] += go[static_cast<size_t>(o)];
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting.

template <typename S, typename FwdF, typename BwdF>
Tensor<S> binary_op(const char* name, const Tensor<S>& a, const Tensor<S>& b,
                    FwdF fwd, BwdF bwd) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<S> out(static_cast<size_t>(numel(out_shape)));
  const auto& av = a.data();
  const auto& bv = b.data();
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else if (b.rank() == 1 && a.rank() >= 1 &&
             a.dim(a.rank() - 1) == b.dim(0) && out_shape == a.shape()) {
    // common bias pattern: [..., C] op [C]
    size_t c = bv.size();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i % c]);
  } else {
    Shape sa = detail::bcast_strides(a.shape(), out_shape);
    Shape sb = detail::bcast_strides(b.shape(), out_shape);
    detail::bcast_visit(out_shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
      out[static_cast<size_t>(o)] =
          fwd(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)]);
    });
  }
  return detail::make_node<S>(
      name, out_shape, std::move(out), {a, b},
      [a, b, out_shape, bwd](TensorNode<S>& self) {
        const auto& g = self.grad;
        bool need_a = detail::wants_grad(a.node());
        bool need_b = detail::wants_grad(b.node());
        if (!need_a && !need_b) return;
        const auto& av = a.data();
        const auto& bv = b.data();
        if (need_a) a.node()->ensure_grad();
        if (need_b) b.node()->ensure_grad();
        if (a.shape() == b.shape()) {
          auto* ga = need_a ? a.node()->grad.data() : nullptr;
          auto* gb = need_b ? b.node()->grad.data() : nullptr;
          for (size_t i = 0; i < g.size(); ++i) {
            S da, db;
            bwd(av[i], bv[i], self.value[i], g[i], da, db);
            if (need_a) ga[i] += da;
            if (need_b) gb[i] += db;
          }
          return;
        }
        if (b.rank() == 1 && a.dim(a.rank() - 1) == b.dim(0) &&
            out_shape == a.shape()) {
          auto* ga = need_a ? a.node()->grad.data() : nullptr;
          auto* gb = need_b ? b.node()->grad.data() : nullptr;
          size_t c = bv.size();
          for (size_t i = 0; i < g.size(); ++i) {
            S da, db;
            bwd(av[i], bv[i % c], self.value[i], g[i], da, db);
            if (need_a) ga[i] += da;
            if (need_b) gb[i % c] += db;
          }
          return;
        }
        std::vector<S> ga_full, gb_full;
        if (need_a) ga_full.assign(g.size(), S(0));
        if (need_b) gb_full.assign(g.size(), S(0));
        Shape sa = detail::bcast_strides(a.shape(), out_shape);
        Shape sb = detail::bcast_strides(b.shape(), out_shape);
        detail::bcast_visit(out_shape, sa, sb,
                            [&](int64_t o, int64_t ia, int64_t ib) {
          auto uo = static_cast<size_t>(o);
          S da, db;
          bwd(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)],
              self.value[uo], g[uo], da, db);
          if (need_a) ga_full[uo] = da;
          if (need_b) gb_full[uo] = db;
        });
        if (need_a)
          detail::reduce_into(ga_full, out_shape, a.shape(), a.node()->grad);
        if (need_b)
          detail::reduce_into(gb_full, out_shape, b.shape(), b.node()->grad);
      });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_op<S>(
      "add", a, b, [](S x, S y) { return x + y; },
      [](S, S, S, S g, S& da, S& db) {
        da = g;
        db = g;
      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_op<S>(
      "sub", a, b, [](S x, S y) { return x - y; },
      [](S, S, S, S g, S& da, S& db) {
        da = g;
        db = -g;
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_op<S>(
      "mul", a, b, [](S x, S y) { return x * y; },
      [](S x, S y, S, S g, S& da, S& db) {
        da = g * y;
        db = g * x;
      });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_op<S>(
      "div", a, b, [](S x, S y) { return x / y; },
      [](S x, S y, S, S g, S& da, S& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

template <typename S, typename FwdF, typename BwdF>
Tensor<S> unary_op(const char* name, const Tensor<S>& a, FwdF fwd, BwdF bwd) {
  const auto& av = a.data();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return detail::make_node<S>(
      name, a.shape(), std::move(out), {a}, [a, bwd](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        const auto& av = a.data();
        for (size_t i = 0; i < ga.size(); ++i)
          ga[i] += bwd(av[i], self.value[i], self.grad[i]);
      });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return unary_op<S>(
      "neg", a, [](S x) { return -x; }, [](S, S, S g) { return -g; });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  return unary_op<S>(
      "relu", a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S, S g) { return x > S(0) ? g : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return unary_op<S>(
      "sigmoid", a,
      [](S x) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y, S g) { return g * y * (S(1) - y); });
}

template <typename S>
Tensor<S> tanh_t(const Tensor<S>& a) {
  return unary_op<S>(
      "tanh", a, [](S x) { return std::tanh(x); },
      [](S, S y, S g) { return g * (S(1) - y * y); });
}

template <typename S>
Tensor<S> exp_t(const Tensor<S>& a) {
  return unary_op<S>(
      "exp", a, [](S x) { return std::exp(x); },
      [](S, S y, S g) { return g * y; });
}

template <typename S>
Tensor<S> log_t(const Tensor<S>& a) {
  return unary_op<S>(
      "log", a, [](S x) { return std::log(x); },
      [](S x, S, S g) { return g / x; });
}

template <typename S>
Tensor<S> sqrt_t(const Tensor<S>& a) {
  return unary_op<S>(
      "sqrt", a, [](S x) { return std::sqrt(x); },
      [](S, S y, S g) { return g / (S(2) * y); });
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  return unary_op<S>(
      "clamp", a,
      [lo, hi](S x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](S x, S, S g) { return (x >= lo && x <= hi) ? g : S(0); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  return unary_op<S>(
      "scale", a, [c](S x) { return c * x; }, [c](S, S, S g) { return c * g; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return unary_op<S>(
      "add_scalar", a, [c](S x) { return x + c; }, [](S, S, S g) { return g; });
}

// Stops gradient flow; shares the value buffer.
template <typename S>
Tensor<S> detach(const Tensor<S>& a) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = a.shape();
  n->value = a.data();
  n->op = "detach";
  return Tensor<S>(n);
}

// ---------------------------------------------------------------------------
// Shape ops.

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, const Shape& shape) {
  check(numel(shape) == a.numel(), "reshape: ", shape_str(a.shape()), " -> ",
        shape_str(shape), " changes element count");
  return detail::make_node<S>(
      "reshape", shape, std::vector<S>(a.data()), {a},
      [a](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
      });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int64_t>& perm) {
  size_t r = a.shape().size();
  check(perm.size() == r, "permute: perm rank mismatch");
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[static_cast<size_t>(perm[i])];
  Shape in_st = strides_of(a.shape());
  Shape perm_st(r);
  for (size_t i = 0; i < r; ++i) perm_st[i] = in_st[static_cast<size_t>(perm[i])];
  std::vector<S> out(static_cast<size_t>(a.numel()));
  Shape zero(r, 0);
  const auto& av = a.data();
  detail::bcast_visit(out_shape, perm_st, zero, [&](int64_t o, int64_t ia, int64_t) {
    out[static_cast<size_t>(o)] = av[static_cast<size_t>(ia)];
  });
  return detail::make_node<S>(
      "permute", out_shape, std::move(out), {a},
      [a, out_shape, perm_st](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        Shape zero(out_shape.size(), 0);
        detail::bcast_visit(out_shape, perm_st, zero,
                            [&](int64_t o, int64_t ia, int64_t) {
          ga[static_cast<size_t>(ia)] += self.grad[static_cast<size_t>(o)];
        });
      });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int64_t axis) {
  check(!parts.empty(), "concat: no inputs");
  Shape base = parts[0].shape();
  auto r = static_cast<int64_t>(base.size());
  check(axis >= 0 && axis < r, "concat: axis ", axis, " out of range");
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    check(static_cast<int64_t>(p.shape().size()) == r, "concat: rank mismatch");
    for (int64_t d = 0; d < r; ++d)
      check(d == axis || p.dim(d) == base[static_cast<size_t>(d)],
            "concat: shape mismatch on dim ", d);
    axis_total += p.dim(axis);
  }
  Shape out_shape = base;
  out_shape[static_cast<size_t>(axis)] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= base[static_cast<size_t>(d)];
  for (int64_t d = axis + 1; d < r; ++d) inner *= base[static_cast<size_t>(d)];
  std::vector<S> out(static_cast<size_t>(numel(out_shape)));
  int64_t offset = 0;
  for (const auto& p : parts) {
    int64_t len = p.dim(axis) * inner;
    const auto& pv = p.data();
    for (int64_t ou = 0; ou < outer; ++ou)
      std::memcpy(out.data() + ou * axis_total * inner + offset,
                  pv.data() + ou * len, static_cast<size_t>(len) * sizeof(S));
    offset += len;
  }
  return detail::make_node<S>(
      "concat", out_shape, std::move(out), parts,
      [parts, outer, inner, axis_total, axis](TensorNode<S>& self) {
        int64_t offset = 0;
        for (const auto& p : parts) {
          int64_t len = p.dim(axis) * inner;
          if (detail::wants_grad(p.node())) {
            p.node()->ensure_grad();
            auto& gp = p.node()->grad;
            for (int64_t ou = 0; ou < outer; ++ou) {
              const S* src = self.grad.data() + ou * axis_total * inner + offset;
              S* dst = gp.data() + ou * len;
              for (int64_t i = 0; i < len; ++i) dst[i] += src[i];
            }
          }
          offset += len;
        }
      });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, int64_t axis, int64_t start, int64_t len) {
  auto r = static_cast<int64_t>(a.shape().size());
  check(axis >= 0 && axis < r, "slice: axis ", axis, " out of range");
  check(start >= 0 && len > 0 && start + len <= a.dim(axis),
        "slice: range [", start, ",", start + len, ") outside dim of size ",
        a.dim(axis));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int64_t d = axis + 1; d < r; ++d) inner *= a.dim(d);
  int64_t in_axis = a.dim(axis);
  std::vector<S> out(static_cast<size_t>(numel(out_shape)));
  const auto& av = a.data();
  for (int64_t ou = 0; ou < outer; ++ou)
    std::memcpy(out.data() + ou * len * inner,
                av.data() + (ou * in_axis + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(S));
  return detail::make_node<S>(
      "slice", out_shape, std::move(out), {a},
      [a, outer, inner, in_axis, start, len](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (int64_t ou = 0; ou < outer; ++ou) {
          const S* src = self.grad.data() + ou * len * inner;
          S* dst = ga.data() + (ou * in_axis + start) * inner;
          for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      });
}

template <typename S>
Tensor<S> broadcast_to(const Tensor<S>& a, const Shape& shape) {
  Shape merged = broadcast_shape(a.shape(), shape);
  check(merged == shape, "broadcast_to: ", shape_str(a.shape()),
        " does not broadcast to ", shape_str(shape));
  Shape sa = detail::bcast_strides(a.shape(), shape);
  Shape zero(shape.size(), 0);
  std::vector<S> out(static_cast<size_t>(numel(shape)));
  const auto& av = a.data();
  detail::bcast_visit(shape, sa, zero, [&](int64_t o, int64_t ia, int64_t) {
    out[static_cast<size_t>(o)] = av[static_cast<size_t>(ia)];
  });
  return detail::make_node<S>(
      "broadcast_to", shape, std::move(out), {a},
      [a, shape](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        detail::reduce_into(self.grad, shape, a.shape(), a.node()->grad);
      });
}

// ---------------------------------------------------------------------------
// Reductions.

namespace detail {
inline Shape reduce_out_shape(const Shape& in, const std::vector<int64_t>& axes,
                              bool keepdims) {
  std::vector<bool> red(in.size(), false);
  for (int64_t ax : axes) {
    check(ax >= 0 && ax < static_cast<int64_t>(in.size()),
          "reduce: axis ", ax, " out of range for rank ", in.size());
    check(!red[static_cast<size_t>(ax)], "reduce: duplicate axis ", ax);
    red[static_cast<size_t>(ax)] = true;
  }
  Shape out;
  for (size_t i = 0; i < in.size(); ++i) {
    if (red[i]) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[i]);
    }
  }
  if (out.empty()) out.push_back(1);
  return out;
}
}  // namespace detail

template <typename S>
Tensor<S> sum(const Tensor<S>& a, const std::vector<int64_t>& axes,
              bool keepdims = false) {
  Shape out_shape = detail::reduce_out_shape(a.shape(), axes, keepdims);
  // strides mapping input index -> output offset (0 on reduced axes)
  std::vector<bool> red(a.shape().size(), false);
  for (int64_t ax : axes) red[static_cast<size_t>(ax)] = true;
  Shape out_st(a.shape().size(), 0);
  {
    Shape full = strides_of(out_shape);
    size_t oi = 0;
    for (size_t i = 0; i < a.shape().size(); ++i) {
      if (red[i]) {
        if (keepdims) ++oi;
        continue;
      }
      out_st[i] = full[oi++];
    }
  }
  std::vector<S> out(static_cast<size_t>(numel(out_shape)), S(0));
  Shape zero(a.shape().size(), 0);
  const auto& av = a.data();
  detail::bcast_visit(a.shape(), out_st, zero, [&](int64_t i, int64_t oo, int64_t) {
    out[static_cast<size_t>(oo)] += av[static_cast<size_t>(i)];
  });
  Shape in_shape = a.shape();
  return detail::make_node<S>(
      "sum", out_shape, std::move(out), {a},
      [a, in_shape, out_st](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        Shape zero(in_shape.size(), 0);
        detail::bcast_visit(in_shape, out_st, zero,
                            [&](int64_t i, int64_t oo, int64_t) {
          ga[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(oo)];
        });
      });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  std::vector<int64_t> axes(a.shape().size());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int64_t>(i);
  return sum(a, axes, false);
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a, const std::vector<int64_t>& axes,
               bool keepdims = false) {
  int64_t cnt = 1;
  for (int64_t ax : axes) cnt *= a.dim(ax);
  return scale(sum(a, axes, keepdims), S(1) / static_cast<S>(cnt));
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

// ---------------------------------------------------------------------------
// Lane ops: softmax / logsumexp over one axis, layer norm over the last axis.

namespace detail {
struct Lanes {
  int64_t outer, len, inner;
};
inline Lanes lanes_for(const Shape& s, int64_t axis) {
  check(axis >= 0 && axis < static_cast<int64_t>(s.size()),
        "axis ", axis, " out of range for shape ", shape_str(s));
  Lanes l{1, s[static_cast<size_t>(axis)], 1};
  for (int64_t d = 0; d < axis; ++d) l.outer *= s[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d)
    l.inner *= s[d];
  return l;
}
}  // namespace detail

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int64_t axis) {
  auto [outer, len, inner] = detail::lanes_for(a.shape(), axis);
  check(len > 0, "softmax: empty axis");
  std::vector<S> out(a.data().size());
  const auto& av = a.data();
  for (int64_t ou = 0; ou < outer; ++ou)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = ou * len * inner + in;
      S m = av[static_cast<size_t>(base)];
      for (int64_t i = 1; i < len; ++i)
        m = std::max(m, av[static_cast<size_t>(base + i * inner)]);
      S z = S(0);
      for (int64_t i = 0; i < len; ++i) {
        S e = std::exp(av[static_cast<size_t>(base + i * inner)] - m);
        out[static_cast<size_t>(base + i * inner)] = e;
        z += e;
      }
      for (int64_t i = 0; i < len; ++i)
        out[static_cast<size_t>(base + i * inner)] /= z;
    }
  int64_t o_ = outer, l_ = len, i_ = inner;
  return detail::make_node<S>(
      "softmax", a.shape(), std::move(out), {a},
      [a, o_, l_, i_](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (int64_t ou = 0; ou < o_; ++ou)
          for (int64_t in = 0; in < i_; ++in) {
            int64_t base = ou * l_ * i_ + in;
            S dot = S(0);
            for (int64_t i = 0; i < l_; ++i) {
              auto k = static_cast<size_t>(base + i * i_);
              dot += self.grad[k] * self.value[k];
            }
            for (int64_t i = 0; i < l_; ++i) {
              auto k = static_cast<size_t>(base + i * i_);
              ga[k] += self.value[k] * (self.grad[k] - dot);
            }
          }
      });
}

template <typename S>
Tensor<S> logsumexp(const Tensor<S>& a, int64_t axis, bool keepdims = false) {
  auto [outer, len, inner] = detail::lanes_for(a.shape(), axis);
  Shape out_shape = detail::reduce_out_shape(a.shape(), {axis}, keepdims);
  std::vector<S> out(static_cast<size_t>(numel(out_shape)));
  const auto& av = a.data();
  for (int64_t ou = 0; ou < outer; ++ou)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = ou * len * inner + in;
      S m = av[static_cast<size_t>(base)];
      for (int64_t i = 1; i < len; ++i)
        m = std::max(m, av[static_cast<size_t>(base + i * inner)]);
      S z = S(0);
      for (int64_t i = 0; i < len; ++i)
        z += std::exp(av[static_cast<size_t>(base + i * inner)] - m);
      out[static_cast<size_t>(ou * inner + in)] = m + std::log(z);
    }
  int64_t o_ = outer, l_ = len, i_ = inner;
  return detail::make_node<S>(
      "logsumexp", out_shape, std::move(out), {a},
      [a, o_, l_, i_](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        const auto& av = a.data();
        for (int64_t ou = 0; ou < o_; ++ou)
          for (int64_t in = 0; in < i_; ++in) {
            int64_t base = ou * l_ * i_ + in;
            auto lane = static_cast<size_t>(ou * i_ + in);
            S g = self.grad[lane];
            S lse = self.value[lane];
            for (int64_t i = 0; i < l_; ++i) {
              auto k = static_cast<size_t>(base + i * i_);
              ga[k] += g * std::exp(av[k] - lse);
            }
          }
      });
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& a, int64_t axis) {
  return sub(a, logsumexp(a, axis, /*keepdims=*/true));
}

// Normalizes over the last axis: (x - mean) / sqrt(var + eps).  No affine
// parameters; modules that want them add an explicit scale/shift.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& a, S eps = S(1e-5)) {
  auto r = static_cast<int64_t>(a.shape().size());
  auto [outer, len, inner] = detail::lanes_for(a.shape(), r - 1);
  (void)inner;
  std::vector<S> out(a.data().size());
  std::vector<S> inv_std(static_cast<size_t>(outer));
  const auto& av = a.data();
  for (int64_t ou = 0; ou < outer; ++ou) {
    int64_t base = ou * len;
    S mu = S(0);
    for (int64_t i = 0; i < len; ++i) mu += av[static_cast<size_t>(base + i)];
    mu /= static_cast<S>(len);
    S var = S(0);
    for (int64_t i = 0; i < len; ++i) {
      S d = av[static_cast<size_t>(base + i)] - mu;
      var += d * d;
    }
    var /= static_cast<S>(len);
    S is = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(ou)] = is;
    for (int64_t i = 0; i < len; ++i)
      out[static_cast<size_t>(base + i)] =
          (av[static_cast<size_t>(base + i)] - mu) * is;
  }
  int64_t o_ = outer, l_ = len;
  return detail::make_node<S>(
      "layer_norm", a.shape(), std::move(out), {a},
      [a, o_, l_, inv_std = std::move(inv_std)](TensorNode<S>& self) {
        if (!detail::wants_grad(a.node())) return;
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (int64_t ou = 0; ou < o_; ++ou) {
          int64_t base = ou * l_;
          S gm = S(0), gym = S(0);
          for (int64_t i = 0; i < l_; ++i) {
            auto k = static_cast<size_t>(base + i);
            gm += self.grad[k];
            gym += self.grad[k] * self.value[k];
          }
          gm /= static_cast<S>(l_);
          gym /= static_cast<S>(l_);
          S is = inv_std[static_cast<size_t>(ou)];
          for (int64_t i = 0; i < l_; ++i) {
            auto k = static_cast<size_t>(base + i);
            ga[k] += is * (self.grad[k] - gm - self.value[k] * gym);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Matrix products.

// a: [..., m, k] (k = last dim), w: [k, n] -> [..., m, n].
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& w) {
  check(a.rank() >= 1 && w.rank() == 2, "matmul: need a rank>=1, w rank 2");
  int64_t k = a.dim(a.rank() - 1);
  check(k == w.dim(0), "matmul: inner dims ", k, " vs ", w.dim(0));
  int64_t n = w.dim(1);
  int64_t m_total = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<S> out(static_cast<size_t>(m_total * n));
  detail::gemm(false, false, m_total, n, k, S(1), a.data().data(), k,
               w.data().data(), n, S(0), out.data(), n);
  return detail::make_node<S>(
      "matmul", out_shape, std::move(out), {a, w},
      [a, w, m_total, n, k](TensorNode<S>& self) {
        if (detail::wants_grad(a.node())) {
          a.node()->ensure_grad();
          detail::gemm(false, true, m_total, k, n, S(1), self.grad.data(), n,
                       w.data().data(), n, S(1), a.node()->grad.data(), k);
        }
        if (detail::wants_grad(w.node())) {
          w.node()->ensure_grad();
          detail::gemm(true, false, k, n, m_total, S(1), a.data().data(), k,
                       self.grad.data(), n, S(1), w.node()->grad.data(), n);
        }
      });
}

// Batched matmul with optional transposes: a: [..., p, q], b: [..., r, s],
// identical leading dims.  Effective product (ta ? a^T : a) @ (tb ? b^T : b).
template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool ta = false,
              bool tb = false) {
  check(a.rank() >= 2 && b.rank() == a.rank(), "bmm: rank mismatch");
  auto r = a.rank();
  int64_t batch = 1;
  for (int64_t d = 0; d < r - 2; ++d) {
    check(a.dim(d) == b.dim(d), "bmm: batch dim ", d, " mismatch");
    batch *= a.dim(d);
  }
  int64_t p = a.dim(r - 2), q = a.dim(r - 1);
  int64_t rr = b.dim(r - 2), ss = b.dim(r - 1);
  int64_t m = ta ? q : p, ka = ta ? p : q;
  int64_t kb = tb ? ss : rr, n = tb ? rr : ss;
  check(ka == kb, "bmm: inner dims ", ka, " vs ", kb);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<S> out(static_cast<size_t>(batch * m * n));
  const S* ad = a.data().data();
  const S* bd = b.data().data();
  for (int64_t i = 0; i < batch; ++i)
    detail::gemm(ta, tb, m, n, ka, S(1), ad + i * p * q, q, bd + i * rr * ss,
                 ss, S(0), out.data() + i * m * n, n);
  return detail::make_node<S>(
      "bmm", out_shape, std::move(out), {a, b},
      [a, b, ta, tb, batch, p, q, rr, ss, m, n, ka](TensorNode<S>& self) {
        const S* ad = a.data().data();
        const S* bd = b.data().data();
        const S* gd = self.grad.data();
        bool need_a = detail::wants_grad(a.node());
        bool need_b = detail::wants_grad(b.node());
        if (need_a) a.node()->ensure_grad();
        if (need_b) b.node()->ensure_grad();
        S* gad = need_a ? a.node()->grad.data() : nullptr;
        S* gbd = need_b ? b.node()->grad.data() : nullptr;
        for (int64_t i = 0; i < batch; ++i) {
          const S* ai = ad + i * p * q;
          const S* bi = bd + i * rr * ss;
          const S* gi = gd + i * m * n;
          if (need_a) {
            S* gai = gad + i * p * q;
            if (!ta && !tb)
              detail::gemm(false, true, p, q, n, S(1), gi, n, bi, ss, S(1), gai, q);
            else if (!ta && tb)
              detail::gemm(false, false, p, q, n, S(1), gi, n, bi, ss, S(1), gai, q);
            else if (ta && !tb)
              detail::gemm(false, true, p, q, ss, S(1), bi, ss, gi, n, S(1), gai, q);
            else
              detail::gemm(true, true, p, q, rr, S(1), bi, ss, gi, n, S(1), gai, q);
          }
          if (need_b) {
            S* gbi = gbd + i * rr * ss;
            if (!ta && !tb)
              detail::gemm(true, false, rr, ss, p, S(1), ai, q, gi, n, S(1), gbi, ss);
            else if (!ta && tb)
              detail::gemm(true, false, rr, ss, m, S(1), gi, n, ai, q, S(1), gbi, ss);
            else if (ta && !tb)
              detail::gemm(false, false, rr, ss, q, S(1), ai, q, gi, n, S(1), gbi, ss);
            else
              detail::gemm(true, true, rr, ss, q, S(1), gi, n, ai, q, S(1), gbi, ss);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// 2-D convolution, NHWC, SAME padding, square kernel given as [kh,kw,ci,co].

enum class Pad { Zero, Replicate };

namespace detail {

struct ConvDims {
  int64_t n, h, w, ci, kh, kw, co, stride, oh, ow, pad_top, pad_left;
};

template <typename S>
ConvDims conv_dims(const Tensor<S>& x, const Tensor<S>& w, int64_t stride) {
  check(x.rank() == 4, "conv2d: input must be [N,H,W,C], got ",
        shape_str(x.shape()));
  check(w.rank() == 4, "conv2d: weight must be [kh,kw,ci,co], got ",
        shape_str(w.shape()));
  check(stride >= 1, "conv2d: stride must be >= 1");
  ConvDims d{};
  d.n = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.ci = x.dim(3);
  d.kh = w.dim(0);
  d.kw = w.dim(1);
  check(w.dim(2) == d.ci, "conv2d: in-channel mismatch ", w.dim(2), " vs ",
        d.ci);
  d.co = w.dim(3);
  d.stride = stride;
  d.oh = ceil_div(d.h, stride);
  d.ow = ceil_div(d.w, stride);
  int64_t pad_h = std::max<int64_t>((d.oh - 1) * stride + d.kh - d.h, 0);
  int64_t pad_w = std::max<int64_t>((d.ow - 1) * stride + d.kw - d.w, 0);
  d.pad_top = pad_h / 2;
  d.pad_left = pad_w / 2;
  return d;
}

// Lower input patches into rows of [n*oh*ow, kh*kw*ci].
template <typename S>
void im2col(const std::vector<S>& x, const ConvDims& d, Pad pad,
            std::vector<S>& cols) {
  int64_t row_len = d.kh * d.kw * d.ci;
  cols.assign(static_cast<size_t>(d.n * d.oh * d.ow * row_len), S(0));
  for (int64_t n = 0; n < d.n; ++n) {
    const S* xn = x.data() + n * d.h * d.w * d.ci;
    S* rown = cols.data() + n * d.oh * d.ow * row_len;
    for (int64_t oy = 0; oy < d.oh; ++oy)
      for (int64_t ox = 0; ox < d.ow; ++ox) {
        S* row = rown + (oy * d.ow + ox) * row_len;
        for (int64_t ky = 0; ky < d.kh; ++ky) {
          int64_t iy = oy * d.stride - d.pad_top + ky;
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            int64_t ix = ox * d.stride - d.pad_left + kx;
            int64_t cy = iy, cx = ix;
            if (pad == Pad::Replicate) {
              cy = std::clamp<int64_t>(iy, 0, d.h - 1);
              cx = std::clamp<int64_t>(ix, 0, d.w - 1);
            } else if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) {
              continue;  // zeros already in place
            }
            std::memcpy(row + (ky * d.kw + kx) * d.ci,
                        xn + (cy * d.w + cx) * d.ci,
                        static_cast<size_t>(d.ci) * sizeof(S));
          }
        }
      }
  }
}

// Adjoint of im2col: scatter-add patch-row gradients back onto the input.
template <typename S>
void col2im(const std::vector<S>& cols, const ConvDims& d, Pad pad,
            std::vector<S>& gx) {
  int64_t row_len = d.kh * d.kw * d.ci;
  for (int64_t n = 0; n < d.n; ++n) {
    S* gxn = gx.data() + n * d.h * d.w * d.ci;
    const S* rown = cols.data() + n * d.oh * d.ow * row_len;
    for (int64_t oy = 0; oy < d.oh; ++oy)
      for (int64_t ox = 0; ox < d.ow; ++ox) {
        const S* row = rown + (oy * d.ow + ox) * row_len;
        for (int64_t ky = 0; ky < d.kh; ++ky) {
          int64_t iy = oy * d.stride - d.pad_top + ky;
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            int64_t ix = ox * d.stride - d.pad_left + kx;
            int64_t cy = iy, cx = ix;
            if (pad == Pad::Replicate) {
              cy = std::clamp<int64_t>(iy, 0, d.h - 1);
              cx = std::clamp<int64_t>(ix, 0, d.w - 1);
            } else if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) {
              continue;
            }
            const S* src = row + (ky * d.kw + kx) * d.ci;
            S* dst = gxn + (cy * d.w + cx) * d.ci;
            for (int64_t c = 0; c < d.ci; ++c) dst[c] += src[c];
          }
        }
      }
  }
}

}  // namespace detail

// x: [N,H,W,Ci], w: [kh,kw,Ci,Co] -> [N,OH,OW,Co], OH = ceil(H/stride).
// Patch rows are rebuilt during backward instead of being cached, trading a
// second im2col pass for a large cut in live tape memory.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int64_t stride,
                 Pad pad = Pad::Zero) {
  detail::ConvDims d = detail::conv_dims(x, w, stride);
  int64_t rows = d.n * d.oh * d.ow;
  int64_t row_len = d.kh * d.kw * d.ci;
  std::vector<S> cols;
  detail::im2col(x.data(), d, pad, cols);
  std::vector<S> out(static_cast<size_t>(rows * d.co));
  detail::gemm(false, false, rows, d.co, row_len, S(1), cols.data(), row_len,
               w.data().data(), d.co, S(0), out.data(), d.co);
  cols.clear();
  cols.shrink_to_fit();
  Shape out_shape{d.n, d.oh, d.ow, d.co};
  return detail::make_node<S>(
      "conv2d", out_shape, std::move(out), {x, w},
      [x, w, d, pad, rows, row_len](TensorNode<S>& self) {
        bool need_x = detail::wants_grad(x.node());
        bool need_w = detail::wants_grad(w.node());
        if (need_w) {
          std::vector<S> cols;
          detail::im2col(x.data(), d, pad, cols);
          w.node()->ensure_grad();
          detail::gemm(true, false, row_len, d.co, rows, S(1), cols.data(),
                       row_len, self.grad.data(), d.co, S(1),
                       w.node()->grad.data(), d.co);
        }
        if (need_x) {
          std::vector<S> gcols(static_cast<size_t>(rows * row_len));
          detail::gemm(false, true, rows, row_len, d.co, S(1),
                       self.grad.data(), d.co, w.data().data(), d.co, S(0),
                       gcols.data(), row_len);
          x.node()->ensure_grad();
          detail::col2im(gcols, d, pad, x.node()->grad);
        }
      });
}

}  // namespace slt
