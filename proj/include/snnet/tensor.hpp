#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "snnet/common.hpp"
#include "snnet/rng.hpp"

namespace snnet {

// Thread-local switch for gradient recording. Forward-only code (evaluation,
// feature collection, teachers) runs under NoGradGuard.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct NodeT {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until backward (or optimizer) touches it
  bool requires_grad = false;
  // Tape edges. Populated only while a recorded graph is alive; backward()
  // consumes them.
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backward_fn;
  const char* op = "leaf";

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  // True if gradients must flow to or through this node.
  bool needs_grad() const { return requires_grad || static_cast<bool>(backward_fn); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
  }
};

// A value-semantic handle to an n-dimensional row-major array with optional
// reverse-mode gradient tracking. Copies share storage; clone() deep-copies.
template <typename T>
class TensorT {
 public:
  using Node = NodeT<T>;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), T{0}, requires_grad);
  }

  static TensorT filled(std::vector<int> shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.assign(checked_numel(n->shape), value);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT from(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
    const int64_t n = checked_numel(shape);
    if (n != static_cast<int64_t>(data.size()))
      throw ValueError(strf("tensor: shape ", shape_str(shape), " wants ", n,
                            " values, got ", data.size()));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
  }

  static TensorT scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static TensorT randn(std::vector<int> shape, Rng& rng, T stddev = T{1},
                       bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  static TensorT identity(int n) {
    auto t = zeros({n, n});
    for (int i = 0; i < n; ++i) t.node_->data[static_cast<size_t>(i) * n + i] = T{1};
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return node_->numel(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> data_mut() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }
  bool needs_grad() const { return node_->needs_grad(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  void clear_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  // Deep copy of the data, detached from any graph.
  TensorT clone() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = node_->requires_grad;
    return TensorT(std::move(n));
  }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_sp() const { return node_; }

  // Reverse-mode sweep from a scalar loss. Accumulates d loss/d leaf into the
  // grad buffer of every reachable node that needs one, then consumes the
  // recorded graph (edges and closures are dropped).
  void backward() const {
    Node* root = node_.get();
    if (!root) throw ValueError("backward: undefined tensor");
    if (root->numel() != 1)
      throw ValueError(strf("backward: loss must be a scalar, got shape ",
                            shape_str(root->shape)));
    if (!root->needs_grad())
      throw ValueError("backward: loss is not part of a recorded computation graph");

    // Iterative post-order over the parent DAG.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* p = node->parents[idx++].get();
        if (visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    root->grad.assign(1, T{1});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // The graph is consumed: free edges so node lifetimes revert to the
    // handles the caller still holds.
    for (Node* n : order) {
      n->backward_fn = nullptr;
      n->parents.clear();
      if (!n->requires_grad && n != root) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }

 private:
  explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static int64_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw ValueError("tensor: empty shape");
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ValueError(strf("tensor: bad dimension in ", shape_str(shape)));
      n *= d;
    }
    return n;
  }

  std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace snnet
