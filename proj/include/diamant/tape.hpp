#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "diamant/common.hpp"
#include "diamant/tensor.hpp"

namespace diamant {

// Reverse-mode tape. Ops append one node per recorded output; backward()
// sweeps the nodes in reverse, pulling the output gradient and accumulating
// into the inputs each node captured. A tape lives for one training step.
//
// Gradient flow is tracked per tensor identity: a tensor participates in
// differentiation when it is a requires_grad leaf or the output of a recorded
// op. Inputs that are neither get no id and no gradient entry.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  bool needs_grad(const Tensor<T>& t) const {
    if (t.requires_grad()) return true;
    auto it = ids_.find(t.node_key());
    return it != ids_.end() && it->second.is_output;
  }

  // Registers t as a leaf if unseen; returns its id.
  std::int64_t ensure_id(const Tensor<T>& t) {
    auto it = ids_.find(t.node_key());
    if (it != ids_.end()) return it->second.id;
    const std::int64_t id = next_id_++;
    ids_.emplace(t.node_key(), IdInfo{id, false});
    pinned_.push_back(t);
    return id;
  }

  std::int64_t register_output(const Tensor<T>& t) {
    const std::int64_t id = next_id_++;
    ids_[t.node_key()] = IdInfo{id, true};
    pinned_.push_back(t);
    return id;
  }

  void record(std::int64_t output_id, BackwardFn fn) {
    nodes_.push_back(NodeRec{output_id, std::move(fn)});
  }

  void accumulate(std::int64_t id, const Tensor<T>& g) {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
      grads_.emplace(id, g.clone());
    } else {
      it->second.accumulate_(g);
    }
  }

  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw ContractError("backward() requires a scalar loss");
    auto it = ids_.find(loss.node_key());
    if (it == ids_.end()) throw ContractError("loss has no recorded history on this tape");
    grads_.clear();
    grads_.emplace(it->second.id, Tensor<T>::full({1}, T(1)));
    for (auto node = nodes_.rbegin(); node != nodes_.rend(); ++node) {
      auto git = grads_.find(node->output_id);
      if (git == grads_.end()) continue;
      node->fn(*this, git->second);
    }
  }

  // Gradient of a tensor after backward(), or nullptr when absent.
  const Tensor<T>* grad(const Tensor<T>& t) const {
    auto it = ids_.find(t.node_key());
    if (it == ids_.end()) return nullptr;
    auto git = grads_.find(it->second.id);
    return git == grads_.end() ? nullptr : &git->second;
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t grad_count() const { return grads_.size(); }

 private:
  struct IdInfo {
    std::int64_t id;
    bool is_output;
  };
  struct NodeRec {
    std::int64_t output_id;
    BackwardFn fn;
  };

  std::int64_t next_id_ = 0;
  std::unordered_map<const void*, IdInfo> ids_;
  std::vector<Tensor<T>> pinned_;
  std::vector<NodeRec> nodes_;
  std::unordered_map<std::int64_t, Tensor<T>> grads_;
};

}  // namespace diamant
