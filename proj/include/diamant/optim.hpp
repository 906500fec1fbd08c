#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>

#include "diamant/param_store.hpp"
#include "diamant/tape.hpp"

namespace diamant {

// Polynomial learning-rate decay: lr0 * (1 - iter/max_iter)^power.
inline double poly_lr(std::int64_t iter, std::int64_t max_iter, double lr0, double power = 0.9) {
  if (max_iter < 1) throw ConfigError("poly_lr: max_iter must be >= 1");
  if (iter < 0 || iter > max_iter)
    throw ContractError("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                        std::to_string(max_iter) + "]");
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
  return lr0 * std::pow(frac, power);
}

// Adam with bias correction and L2 regularization folded into the gradient.
// Moments are kept per parameter name so one optimizer can drive a store
// whose tensors are replaced between steps (values are read through the
// store each call).
template <typename T>
class Adam {
 public:
  explicit Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  std::int64_t step_count() const { return t_; }

  // Applies one update to every trainable entry that received a gradient.
  void step(ParamStore<T>& ps, Tape<T>& tape, T lr, T weight_decay = T(0)) {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
    for (auto& e : ps.entries()) {
      if (!e.trainable) continue;
      const Tensor<T>* g = tape.grad(e.tensor);
      if (!g) continue;
      auto& m = slot(m_, e.name, e.tensor.shape());
      auto& v = slot(v_, e.name, e.tensor.shape());
      if (m.shape() != e.tensor.shape())
        throw ContractError("adam: state shape mismatch for " + e.name);
      T* p = e.tensor.data();
      T* mp = m.data();
      T* vp = v.data();
      const T* gp = g->data();
      for (std::int64_t i = 0; i < e.tensor.numel(); ++i) {
        const T gi = gp[i] + weight_decay * p[i];
        mp[i] = beta1_ * mp[i] + (T(1) - beta1_) * gi;
        vp[i] = beta2_ * vp[i] + (T(1) - beta2_) * gi * gi;
        const double mhat = static_cast<double>(mp[i]) / bc1;
        const double vhat = static_cast<double>(vp[i]) / bc2;
        p[i] -= static_cast<T>(static_cast<double>(lr) * mhat /
                               (std::sqrt(vhat) + static_cast<double>(eps_)));
      }
    }
  }

 private:
  Tensor<T>& slot(std::unordered_map<std::string, Tensor<T>>& table, const std::string& name,
                  const Shape& shape) {
    auto it = table.find(name);
    if (it == table.end()) it = table.emplace(name, Tensor<T>::zeros(shape)).first;
    return it->second;
  }

  T beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Tensor<T>> m_, v_;
};

}  // namespace diamant
