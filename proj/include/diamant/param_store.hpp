#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "diamant/common.hpp"
#include "diamant/tensor.hpp"

namespace diamant {

// Ordered registry of named parameter tensors. Insertion order is the
// iteration order, which checkpoint layout, EMA sweeps, and initialization
// all rely on. Frozen entries (running statistics, constants) are saved and
// restored but excluded from the trainable count.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> t, bool trainable = true) {
    if (index_.count(name)) throw ContractError("parameter already registered: " + name);
    t.set_requires_grad(trainable);  // trainable entries are gradient leaves
    index_.emplace(name, entries_.size());
    entries_.push_back({name, std::move(t), trainable});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.numel();
    return n;
  }

  // Deep copy; the copy's buffers are independent of the source's.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.clone(), e.trainable);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace diamant
