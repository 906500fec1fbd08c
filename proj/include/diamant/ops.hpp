#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "diamant/common.hpp"
#include "diamant/tape.hpp"
#include "diamant/tensor.hpp"

// Differentiable primitives. Free functions of (inputs..., Tape<T>*); passing
// a tape records a backward rule, nullptr runs plain forward. All outputs are
// freshly allocated; inputs are never written to.

namespace diamant {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

// b broadcasts onto a when its shape (leading 1s stripped) is a suffix of
// a's shape; a scalar [1] broadcasts onto anything.
inline bool broadcast_compatible(const Shape& a, const Shape& b) {
  std::size_t skip = 0;
  while (skip < b.size() - 1 && b[skip] == 1) ++skip;
  const std::size_t nb = b.size() - skip;
  if (nb == 1 && b[skip] == 1) return true;
  if (nb > a.size()) return false;
  for (std::size_t i = 0; i < nb; ++i)
    if (b[skip + i] != a[a.size() - nb + i]) return false;
  return true;
}

// Sums g over the broadcast (leading) block so it matches shape bs.
template <typename T>
Tensor<T> reduce_grad_to(const Tensor<T>& g, const Shape& bs) {
  const std::int64_t nb = numel_of(bs);
  if (g.numel() == nb) return g.reshaped(bs);
  auto out = Tensor<T>::zeros(bs);
  T* dst = out.data();
  const T* src = g.data();
  const std::int64_t blocks = g.numel() / nb;
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const T* s = src + blk * nb;
    for (std::int64_t j = 0; j < nb; ++j) dst[j] += s[j];
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary elementwise
// ---------------------------------------------------------------------------

template <typename T, typename F>
Tensor<T> binary_ew(const Tensor<T>& a, const Tensor<T>& b, F f, const char* name) {
  if (!detail::broadcast_compatible(a.shape(), b.shape()))
    throw ShapeError(std::string(name) + ": shape " + shape_str(b.shape()) +
                     " does not broadcast onto " + shape_str(a.shape()));
  auto out = Tensor<T>::zeros(a.shape());
  T* o = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
  const std::int64_t nb = b.numel();
  const std::int64_t n = a.numel();
  if (nb == n) {
    for (std::int64_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
  } else {
    for (std::int64_t blk = 0; blk < n / nb; ++blk)
      for (std::int64_t j = 0; j < nb; ++j) o[blk * nb + j] = f(pa[blk * nb + j], pb[j]);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  auto out = binary_ew(a, b, [](T x, T y) { return x + y; }, "add");
  if (tape && (tape->needs_grad(a) || tape->needs_grad(b))) {
    const bool na = tape->needs_grad(a), nb = tape->needs_grad(b);
    const auto ia = na ? tape->ensure_id(a) : -1;
    const auto ib = nb ? tape->ensure_id(b) : -1;
    const Shape bs = b.shape();
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      if (na) tp.accumulate(ia, g);
      if (nb) tp.accumulate(ib, detail::reduce_grad_to(g, bs));
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  auto out = binary_ew(a, b, [](T x, T y) { return x - y; }, "sub");
  if (tape && (tape->needs_grad(a) || tape->needs_grad(b))) {
    const bool na = tape->needs_grad(a), nb = tape->needs_grad(b);
    const auto ia = na ? tape->ensure_id(a) : -1;
    const auto ib = nb ? tape->ensure_id(b) : -1;
    const Shape bs = b.shape();
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      if (na) tp.accumulate(ia, g);
      if (nb) {
        auto gneg = Tensor<T>::zeros(g.shape());
        T* p = gneg.data();
        const T* s = g.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) p[i] = -s[i];
        tp.accumulate(ib, detail::reduce_grad_to(gneg, bs));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  auto out = binary_ew(a, b, [](T x, T y) { return x * y; }, "mul");
  if (tape && (tape->needs_grad(a) || tape->needs_grad(b))) {
    const bool na = tape->needs_grad(a), nb = tape->needs_grad(b);
    const auto ia = na ? tape->ensure_id(a) : -1;
    const auto ib = nb ? tape->ensure_id(b) : -1;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      if (na) tp.accumulate(ia, binary_ew(g, b, [](T x, T y) { return x * y; }, "mul"));
      if (nb) {
        auto gb_full = binary_ew(g, a, [](T x, T y) { return x * y; }, "mul");
        tp.accumulate(ib, detail::reduce_grad_to(gb_full, b.shape()));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  auto out = binary_ew(a, b, [](T x, T y) { return x / y; }, "div");
  if (tape && (tape->needs_grad(a) || tape->needs_grad(b))) {
    const bool na = tape->needs_grad(a), nb = tape->needs_grad(b);
    const auto ia = na ? tape->ensure_id(a) : -1;
    const auto ib = nb ? tape->ensure_id(b) : -1;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      if (na) tp.accumulate(ia, binary_ew(g, b, [](T x, T y) { return x / y; }, "div"));
      if (nb) {
        // d/db (a/b) = -a / b^2 = -out / b
        auto gb_full = binary_ew(mul(g, out), b, [](T x, T y) { return -x / y; }, "div");
        tp.accumulate(ib, detail::reduce_grad_to(gb_full, b.shape()));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unary elementwise
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename DerivF>
Tensor<T> unary_ew(const Tensor<T>& a, Tape<T>* tape, FwdF f, DerivF dfdx) {
  auto out = Tensor<T>::zeros(a.shape());
  T* o = out.data();
  const T* p = a.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = f(p[i]);
  if (tape && tape->needs_grad(a)) {
    const auto ia = tape->ensure_id(a);
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      auto gx = Tensor<T>::zeros(a.shape());
      T* d = gx.data();
      const T* gp = g.data();
      const T* xp = a.data();
      const T* yp = out.data();
      for (std::int64_t i = 0; i < n; ++i) d[i] = gp[i] * dfdx(xp[i], yp[i]);
      tp.accumulate(ia, gx);
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  return unary_ew(
      a, tape, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  return unary_ew(
      a, tape, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// Natural log. Without a clamp floor, inputs <= 0 are a domain error; with a
// floor, inputs below it are clamped first and get zero gradient.
template <typename T>
Tensor<T> log(const Tensor<T>& a, Tape<T>* tape = nullptr, T clamp_floor = T(0)) {
  if (clamp_floor <= T(0)) {
    const T* p = a.data();
    for (std::int64_t i = 0; i < a.numel(); ++i)
      if (p[i] <= T(0)) throw DomainError("log: input <= 0 without a clamp floor");
    return unary_ew(
        a, tape, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
  }
  return unary_ew(
      a, tape, [clamp_floor](T x) { return std::log(x < clamp_floor ? clamp_floor : x); },
      [clamp_floor](T x, T) { return x < clamp_floor ? T(0) : T(1) / x; });
}

// Exact GELU: x * Phi(x) with the Gaussian CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary_ew(
      a, tape,
      [](T x) {
        return static_cast<T>(0.5 * static_cast<double>(x) *
                              (1.0 + std::erf(static_cast<double>(x) * inv_sqrt2)));
      },
      [](T x, T) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        return static_cast<T>(cdf + xd * pdf);
      });
}

// Multiply by a compile-time-constant-free scalar (the caller's 1/tau etc).
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c, Tape<T>* tape = nullptr) {
  return unary_ew(
      a, tape, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c, Tape<T>* tape = nullptr) {
  return unary_ew(
      a, tape, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape, Tape<T>* tape = nullptr) {
  auto out = a.reshaped(new_shape);
  out.set_requires_grad(false);
  if (tape && tape->needs_grad(a)) {
    const auto ia = tape->ensure_id(a);
    const Shape as = a.shape();
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      tp.accumulate(ia, g.reshaped(as));
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm, Tape<T>* tape = nullptr) {
  const int r = a.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
      throw ShapeError("permute: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = a.dim(p);
  }
  auto out = Tensor<T>::zeros(out_shape);
  const auto in_strides = strides_of(a.shape());
  const auto out_strides = strides_of(out_shape);
  // stride of output axis i in the input layout
  std::vector<std::int64_t> gather(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    gather[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  T* o = out.data();
  const T* p = a.data();
  const std::int64_t n = a.numel();
  std::vector<std::int64_t> coord(static_cast<std::size_t>(r), 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    o[i] = p[src];
    for (int ax = r - 1; ax >= 0; --ax) {
      auto& c = coord[static_cast<std::size_t>(ax)];
      src += gather[static_cast<std::size_t>(ax)];
      if (++c < out_shape[static_cast<std::size_t>(ax)]) break;
      src -= c * gather[static_cast<std::size_t>(ax)];
      c = 0;
    }
  }
  if (tape && tape->needs_grad(a)) {
    const auto ia = tape->ensure_id(a);
    std::vector<int> inv(perm.size());
    for (int i = 0; i < r; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      tp.accumulate(ia, permute<T>(g, inv, nullptr));
    });
  }
  return out;
}

// Contiguous slice along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::int64_t start, std::int64_t len,
                Tape<T>* tape = nullptr) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("slice: axis out of range");
  const std::int64_t dim = a.dim(axis);
  if (start < 0 || len < 1 || start + len > dim) throw ShapeError("slice: range out of bounds");
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  auto out = Tensor<T>::zeros(out_shape);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  T* o = out.data();
  const T* p = a.data();
  for (std::int64_t u = 0; u < outer; ++u)
    std::memcpy(o + u * len * inner, p + (u * dim + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(T));
  if (tape && tape->needs_grad(a)) {
    const auto ia = tape->ensure_id(a);
    const Shape as = a.shape();
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      auto gx = Tensor<T>::zeros(as);
      T* d = gx.data();
      const T* s = g.data();
      for (std::int64_t u = 0; u < outer; ++u)
        std::memcpy(d + (u * dim + start) * inner, s + u * len * inner,
                    static_cast<std::size_t>(len * inner) * sizeof(T));
      tp.accumulate(ia, gx);
    });
  }
  return out;
}

// Repeats x along new leading dims; x's shape must be a suffix of target.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& target, Tape<T>* tape = nullptr) {
  const auto& xs = x.shape();
  if (xs.size() > target.size() || !detail::broadcast_compatible(target, xs))
    throw ShapeError("broadcast_to: " + shape_str(xs) + " does not broadcast onto " +
                     shape_str(target));
  auto out = Tensor<T>::zeros(target);
  const std::int64_t nx = x.numel();
  const std::int64_t blocks = out.numel() / nx;
  T* o = out.data();
  const T* p = x.data();
  for (std::int64_t blk = 0; blk < blocks; ++blk)
    std::memcpy(o + blk * nx, p, static_cast<std::size_t>(nx) * sizeof(T));
  if (tape && tape->needs_grad(x)) {
    const auto ix = tape->ensure_id(x);
    const Shape xshape = xs;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      tp.accumulate(ix, detail::reduce_grad_to(g, xshape));
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis, Tape<T>* tape = nullptr) {
  if (parts.empty()) throw ShapeError("concat: no tensors");
  const auto& first = parts.front();
  if (axis < 0 || axis >= first.rank()) throw ShapeError("concat: axis out of range");
  std::int64_t axis_total = 0;
  for (const auto& t : parts) {
    if (t.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < first.rank(); ++i)
      if (i != axis && t.dim(i) != first.dim(i))
        throw ShapeError("concat: off-axis dims differ: " + shape_str(t.shape()) + " vs " +
                         shape_str(first.shape()));
    axis_total += t.dim(axis);
  }
  Shape out_shape = first.shape();
  out_shape[static_cast<std::size_t>(axis)] = axis_total;
  auto out = Tensor<T>::zeros(out_shape);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first.dim(i);
  for (int i = axis + 1; i < first.rank(); ++i) inner *= first.dim(i);
  T* o = out.data();
  std::int64_t off = 0;
  for (const auto& t : parts) {
    const std::int64_t len = t.dim(axis);
    const T* p = t.data();
    for (std::int64_t u = 0; u < outer; ++u)
      std::memcpy(o + (u * axis_total + off) * inner, p + u * len * inner,
                  static_cast<std::size_t>(len * inner) * sizeof(T));
    off += len;
  }
  if (tape) {
    bool any = false;
    for (const auto& t : parts) any = any || tape->needs_grad(t);
    if (any) {
      struct PartInfo {
        std::int64_t id;
        std::int64_t offset;
        std::int64_t len;
        bool needs;
      };
      std::vector<PartInfo> infos;
      std::int64_t o2 = 0;
      for (const auto& t : parts) {
        const bool needs = tape->needs_grad(t);
        infos.push_back({needs ? tape->ensure_id(t) : -1, o2, t.dim(axis), needs});
        o2 += t.dim(axis);
      }
      const Shape base = first.shape();
      tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
        for (const auto& info : infos) {
          if (!info.needs) continue;
          tp.accumulate(info.id, slice<T>(g, axis, info.offset, info.len, nullptr));
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

// For each input flat index, the flat index in the reduced output.
struct ReducePlan {
  Shape out_shape;        // with keepdims semantics applied
  Shape mapped_shape;     // input shape with reduced dims set to 1
  std::int64_t count = 1; // reduced element count
};

inline ReducePlan make_reduce_plan(const Shape& in, const std::vector<int>& axes, bool keepdims) {
  ReducePlan plan;
  std::vector<bool> reduced(in.size(), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= static_cast<int>(in.size())) throw ShapeError("reduce: axis out of range");
    if (reduced[static_cast<std::size_t>(ax)]) throw ShapeError("reduce: duplicate axis");
    reduced[static_cast<std::size_t>(ax)] = true;
    plan.count *= in[static_cast<std::size_t>(ax)];
  }
  plan.mapped_shape = in;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (reduced[i]) plan.mapped_shape[i] = 1;
  if (keepdims) {
    plan.out_shape = plan.mapped_shape;
  } else {
    for (std::size_t i = 0; i < in.size(); ++i)
      if (!reduced[i]) plan.out_shape.push_back(in[i]);
    if (plan.out_shape.empty()) plan.out_shape.push_back(1);
  }
  return plan;
}

template <typename T, typename Body>
void for_each_mapped(const Shape& in, const Shape& mapped, Body body) {
  const int r = static_cast<int>(in.size());
  const auto mstrides = strides_of(mapped);
  std::vector<std::int64_t> coord(static_cast<std::size_t>(r), 0);
  std::int64_t out_idx = 0;
  const std::int64_t n = numel_of(in);
  for (std::int64_t i = 0; i < n; ++i) {
    body(i, out_idx);
    for (int ax = r - 1; ax >= 0; --ax) {
      auto& c = coord[static_cast<std::size_t>(ax)];
      ++c;
      if (mapped[static_cast<std::size_t>(ax)] > 1) out_idx += mstrides[static_cast<std::size_t>(ax)];
      if (c < in[static_cast<std::size_t>(ax)]) break;
      if (mapped[static_cast<std::size_t>(ax)] > 1) out_idx -= c * mstrides[static_cast<std::size_t>(ax)];
      c = 0;
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, const std::vector<int>& axes, bool keepdims = false,
                     Tape<T>* tape = nullptr) {
  const auto plan = detail::make_reduce_plan(a.shape(), axes, keepdims);
  auto out = Tensor<T>::zeros(plan.out_shape);
  T* o = out.data();
  const T* p = a.data();
  detail::for_each_mapped<T>(a.shape(), plan.mapped_shape,
                             [&](std::int64_t i, std::int64_t oi) { o[oi] += p[i]; });
  if (tape && tape->needs_grad(a)) {
    const auto ia = tape->ensure_id(a);
    const Shape as = a.shape();
    const Shape mapped = plan.mapped_shape;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      auto gx = Tensor<T>::zeros(as);
      T* d = gx.data();
      const T* s = g.data();
      detail::for_each_mapped<T>(as, mapped,
                                 [&](std::int64_t i, std::int64_t oi) { d[i] = s[oi]; });
      tp.accumulate(ia, gx);
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, const std::vector<int>& axes, bool keepdims = false,
                      Tape<T>* tape = nullptr) {
  const auto plan = detail::make_reduce_plan(a.shape(), axes, keepdims);
  auto summed = reduce_sum(a, axes, keepdims, tape);
  return scale(summed, T(1) / static_cast<T>(plan.count), tape);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  std::vector<int> axes(static_cast<std::size_t>(a.rank()));
  for (int i = 0; i < a.rank(); ++i) axes[static_cast<std::size_t>(i)] = i;
  return reduce_sum(a, axes, false, tape);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  return scale(sum_all(a, tape), T(1) / static_cast<T>(a.numel()), tape);
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis, Tape<T>* tape = nullptr) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("softmax: axis out of range");
  {
    const T* p = a.data();
    for (std::int64_t i = 0; i < a.numel(); ++i)
      if (!std::isfinite(static_cast<double>(p[i])))
        throw DomainError("softmax: non-finite input");
  }
  const std::int64_t dim = a.dim(axis);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  auto out = Tensor<T>::zeros(a.shape());
  T* o = out.data();
  const T* p = a.data();
  for (std::int64_t u = 0; u < outer; ++u) {
    for (std::int64_t v = 0; v < inner; ++v) {
      const std::int64_t base = u * dim * inner + v;
      T mx = p[base];
      for (std::int64_t k = 1; k < dim; ++k) mx = std::max(mx, p[base + k * inner]);
      T denom = T(0);
      for (std::int64_t k = 0; k < dim; ++k) {
        const T e = std::exp(p[base + k * inner] - mx);
        o[base + k * inner] = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (std::int64_t k = 0; k < dim; ++k) o[base + k * inner] *= inv;
    }
  }
  if (tape && tape->needs_grad(a)) {
    const auto ia = tape->ensure_id(a);
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      auto gx = Tensor<T>::zeros(a.shape());
      T* d = gx.data();
      const T* gp = g.data();
      const T* yp = out.data();
      for (std::int64_t u = 0; u < outer; ++u) {
        for (std::int64_t v = 0; v < inner; ++v) {
          const std::int64_t base = u * dim * inner + v;
          T dot = T(0);
          for (std::int64_t k = 0; k < dim; ++k)
            dot += gp[base + k * inner] * yp[base + k * inner];
          for (std::int64_t k = 0; k < dim; ++k) {
            const std::int64_t idx = base + k * inner;
            d[idx] = yp[idx] * (gp[idx] - dot);
          }
        }
      }
      tp.accumulate(ia, gx);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul (optionally batched over matching leading dims)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() < 2 || b.rank() != a.rank())
    throw ShapeError("matmul: ranks must match and be >= 2, got " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const int r = a.rank();
  for (int i = 0; i < r - 2; ++i)
    if (a.dim(i) != b.dim(i)) throw ShapeError("matmul: batch dims differ");
  const std::int64_t m = a.dim(r - 2), k = a.dim(r - 1);
  const std::int64_t k2 = b.dim(r - 2), n = b.dim(r - 1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Shape out_shape(a.shape());
  out_shape[static_cast<std::size_t>(r - 2)] = m;
  out_shape[static_cast<std::size_t>(r - 1)] = n;
  std::int64_t batch = 1;
  for (int i = 0; i < r - 2; ++i) batch *= a.dim(i);
  auto out = Tensor<T>::zeros(out_shape);
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    ConstMatMap<T> A(a.data() + bi * m * k, m, k);
    ConstMatMap<T> B(b.data() + bi * k * n, k, n);
    MatMap<T> C(out.data() + bi * m * n, m, n);
    C.noalias() = A * B;
  }
  if (tape && (tape->needs_grad(a) || tape->needs_grad(b))) {
    const bool na = tape->needs_grad(a), nb = tape->needs_grad(b);
    const auto ia = na ? tape->ensure_id(a) : -1;
    const auto ib = nb ? tape->ensure_id(b) : -1;
    tape->record(tape->register_output(out), [=](Tape<T>& tp, const Tensor<T>& g) {
      if (na) {
        auto ga = Tensor<T>::zeros(a.shape());
        for (std::int64_t bi = 0; bi < batch; ++bi) {
          ConstMatMap<T> G(g.data() + bi * m * n, m, n);
          ConstMatMap<T> B(b.data() + bi * k * n, k, n);
          MatMap<T> GA(ga.data() + bi * m * k, m, k);
          GA.noalias() = G * B.transpose();
        }
        tp.accumulate(ia, ga);
      }
      if (nb) {
        auto gb = Tensor<T>::zeros(b.shape());
        for (std::int64_t bi = 0; bi < batch; ++bi) {
          ConstMatMap<T> G(g.data() + bi * m * n, m, n);
          ConstMatMap<T> A(a.data() + bi * m * k, m, k);
          MatMap<T> GB(gb.data() + bi * k * n, k, n);
          GB.noalias() = A.transpose() * G;
        }
        tp.accumulate(ib, gb);
      }
    });
  }
  return out;
}

}  // namespace diamant
