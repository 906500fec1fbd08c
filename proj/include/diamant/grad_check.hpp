#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "diamant/common.hpp"
#include "diamant/tape.hpp"
#include "diamant/tensor.hpp"

// Finite-difference verification of reverse-mode gradients. f must be a
// deterministic map (inputs, tape) -> scalar tensor; it is re-evaluated with
// per-coordinate +/-eps perturbations and compared against one taped backward
// pass. Returns the max over coordinates of
//   |analytic - numeric| / max(1e-12, |analytic| + |numeric|).

namespace diamant {

template <typename T, typename F>
double grad_check_multi(F f, std::vector<Tensor<T>>& xs, T eps) {
  for (auto& x : xs) x.set_requires_grad(true);
  Tape<T> tape;
  auto loss = f(xs, &tape);
  tape.backward(loss);
  std::vector<Tensor<T>> analytic;
  analytic.reserve(xs.size());
  for (auto& x : xs) {
    const Tensor<T>* g = tape.grad(x);
    analytic.push_back(g ? g->clone() : Tensor<T>::zeros(x.shape()));
  }
  double max_err = 0.0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    T* xd = xs[t].data();
    for (std::int64_t i = 0; i < xs[t].numel(); ++i) {
      const T orig = xd[i];
      xd[i] = orig + eps;
      const double fp = static_cast<double>(f(xs, nullptr).item());
      xd[i] = orig - eps;
      const double fm = static_cast<double>(f(xs, nullptr).item());
      xd[i] = orig;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[t].at(i));
      const double err =
          std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

template <typename T, typename F>
double grad_check(F f, Tensor<T> x, T eps) {
  std::vector<Tensor<T>> xs{x};
  auto wrap = [&f](std::vector<Tensor<T>>& v, Tape<T>* tape) { return f(v[0], tape); };
  return grad_check_multi<T>(wrap, xs, eps);
}

// Same contract as grad_check_multi, but verifies only up to `per_tensor`
// randomly chosen coordinates of each input — for graphs whose full
// coordinate sweep would be too slow. numeric/analytic comparison unchanged.
template <typename T, typename F>
double grad_check_sampled(F f, std::vector<Tensor<T>>& xs, T eps, std::int64_t per_tensor,
                          Rng& rng) {
  for (auto& x : xs) x.set_requires_grad(true);
  Tape<T> tape;
  auto loss = f(xs, &tape);
  tape.backward(loss);
  std::vector<Tensor<T>> analytic;
  analytic.reserve(xs.size());
  for (auto& x : xs) {
    const Tensor<T>* g = tape.grad(x);
    analytic.push_back(g ? g->clone() : Tensor<T>::zeros(x.shape()));
  }
  double max_err = 0.0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    std::vector<std::int64_t> coords;
    if (xs[t].numel() <= per_tensor) {
      for (std::int64_t i = 0; i < xs[t].numel(); ++i) coords.push_back(i);
    } else {
      for (std::int64_t i = 0; i < per_tensor; ++i)
        coords.push_back(static_cast<std::int64_t>(
            rng.uniform_index(static_cast<std::size_t>(xs[t].numel()))));
    }
    T* xd = xs[t].data();
    for (const auto i : coords) {
      const T orig = xd[i];
      xd[i] = orig + eps;
      const double fp = static_cast<double>(f(xs, nullptr).item());
      xd[i] = orig - eps;
      const double fm = static_cast<double>(f(xs, nullptr).item());
      xd[i] = orig;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[t].at(i));
      const double err =
          std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace diamant
