#pragma once

#include <cstdint>
#include <cstring>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "diamant/common.hpp"

namespace diamant {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2, I64 = 3 };

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr DType value = DType::F32;
};
template <>
struct dtype_of<double> {
  static constexpr DType value = DType::F64;
};
template <>
struct dtype_of<std::uint8_t> {
  static constexpr DType value = DType::U8;
};
template <>
struct dtype_of<std::int64_t> {
  static constexpr DType value = DType::I64;
};

inline std::size_t dtype_size(DType dt) {
  switch (dt) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
    case DType::I64: return 8;
  }
  throw FormatError("unknown dtype code");
}

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline void check_shape_valid(const Shape& s) {
  if (s.empty()) throw ShapeError("rank-0 shapes are not allowed; use shape [1] for scalars");
  for (auto d : s) {
    if (d < 1) throw ShapeError("all dimension sizes must be >= 1, got " + shape_str(s));
  }
}

// Dense row-major tensor with value semantics over shared immutable storage.
// Copies are cheap (shared_ptr); views made by reshape() share the buffer.
// Mutation through data() is reserved for code that owns the tensor outright
// (initialization, optimizer updates, batch assembly) and must never touch a
// tensor that is recorded on a live tape.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    check_shape_valid(shape);
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::make_shared<std::vector<T>>(n, T(0)));
  }

  static Tensor full(Shape shape, T value) {
    check_shape_valid(shape);
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::make_shared<std::vector<T>>(n, value));
  }

  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor from_data(Shape shape, std::vector<T> values) {
    check_shape_valid(shape);
    if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    return Tensor(std::move(shape), std::make_shared<std::vector<T>>(std::move(values)));
  }

  static Tensor ones_like(const Tensor& t) { return full(t.shape(), T(1)); }
  static Tensor zeros_like(const Tensor& t) { return zeros(t.shape()); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  std::int64_t dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(d_->buf->size()); }

  const T* data() const { return d_->buf->data(); }
  T* data() { return d_->buf->data(); }
  const std::vector<T>& values() const { return *d_->buf; }

  T at(std::int64_t flat) const { return (*d_->buf)[static_cast<std::size_t>(flat)]; }
  T& at(std::int64_t flat) { return (*d_->buf)[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    d_->requires_grad = v;
    return *this;
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor");
    return (*d_->buf)[0];
  }

  // New tensor sharing this buffer with a different shape.
  Tensor reshaped(Shape new_shape) const {
    check_shape_valid(new_shape);
    if (numel_of(new_shape) != numel())
      throw ShapeError("reshape from " + shape_str(shape()) + " to " + shape_str(new_shape) +
                       " changes element count");
    Tensor out(std::move(new_shape), d_->buf);
    out.d_->requires_grad = d_->requires_grad;
    return out;
  }

  // Deep copy with its own buffer.
  Tensor clone() const {
    Tensor out(d_->shape, std::make_shared<std::vector<T>>(*d_->buf));
    out.d_->requires_grad = d_->requires_grad;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(static_cast<std::size_t>(numel()));
    const T* src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>::from_data(shape(), std::move(out));
  }

  // Identity of the underlying node for tape bookkeeping.
  const void* node_key() const { return d_.get(); }
  long node_use_count() const { return d_.use_count(); }
  long buffer_use_count() const { return d_->buf.use_count(); }

  // In-place += with copy-on-write when the node or buffer is shared.
  void accumulate_(const Tensor& g) {
    if (shape() != g.shape()) throw ShapeError("gradient accumulation shape mismatch");
    if (d_.use_count() > 1 || d_->buf.use_count() > 1) {
      auto fresh = std::make_shared<std::vector<T>>(*d_->buf);
      d_ = std::make_shared<Node>(Node{d_->shape, std::move(fresh), d_->requires_grad});
    }
    T* dst = d_->buf->data();
    const T* src = g.data();
    const auto n = static_cast<std::size_t>(numel());
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
  }

 private:
  struct Node {
    Shape shape;
    std::shared_ptr<std::vector<T>> buf;
    bool requires_grad = false;
  };

  Tensor(Shape shape, std::shared_ptr<std::vector<T>> buf)
      : d_(std::make_shared<Node>(Node{std::move(shape), std::move(buf), false})) {}

  std::shared_ptr<Node> d_;
};

// Row-major strides for a shape.
inline std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
  return st;
}

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, T lo = T(0), T hi = T(1)) {
  auto t = Tensor<T>::zeros(std::move(shape));
  T* p = t.data();
  const auto n = static_cast<std::size_t>(t.numel());
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, T mean = T(0), T stddev = T(1)) {
  auto t = Tensor<T>::zeros(std::move(shape));
  T* p = t.data();
  const auto n = static_cast<std::size_t>(t.numel());
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(mean + stddev * rng.normal());
  return t;
}

}  // namespace diamant
