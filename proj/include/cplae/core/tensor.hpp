#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cplae/core/error.hpp"

namespace cplae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// True when operations on the current thread record graph nodes.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  bool interior = false;
  std::uint64_t id = detail::node_counter().fetch_add(1);
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads node.grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !interior; }

  void accumulate(std::span<const T> g) {
    if (!requires_grad) return;
    if (grad.empty()) grad.assign(data.size(), T(0));
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor with reverse-mode differentiation. Copies share the
/// underlying node; use clone() for an independent value.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    for (auto d : shape)
      if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape));
    if (shape_numel(shape) != data.size())
      throw DimensionError("shape " + shape_str(shape) + " does not match buffer of " + std::to_string(data.size()));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) { return Tensor({1}, {value}, requires_grad); }
  static Tensor vector(std::vector<T> values, bool requires_grad = false) {
    const auto n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = flag;
    if (!flag) node_->grad.clear();
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }
  bool is_leaf() const { return node_->is_leaf(); }
  const std::string& op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }

  /// Independent leaf copy of the values.
  Tensor clone(bool requires_grad = false) const { return Tensor(shape(), node_->data, requires_grad); }
  /// Leaf sharing no graph history; values copied.
  Tensor detach() const { return clone(false); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Builds a result node. Records parents and the backward closure only when
/// grad mode is on and at least one parent requires grad.
template <typename T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = std::move(op);
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) {
      if (p->consumed) throw ContractError("operation on a consumed graph node (" + p->op + ")");
      needs = needs || p->requires_grad;
    }
  if (needs) {
    node->requires_grad = true;
    node->interior = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

namespace detail {

template <typename T>
std::vector<Node<T>*> reverse_topological(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  // Node ids grow with construction order, so descending id is a valid
  // reverse topological order.
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });
  return order;
}

}  // namespace detail

/// Populates grad on every requires_grad leaf reachable from loss. The graph
/// is consumed: a second call through any of its interior nodes throws.
/// Leaf gradients accumulate across separate graphs until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw ContractError("backward on undefined tensor");
  if (loss.numel() != 1) throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  Node<T>* root = loss.node().get();
  if (root->consumed) throw ContractError("backward on an already-consumed graph; rebuild the graph");
  if (!root->requires_grad) throw ContractError("loss does not depend on any tensor requiring grad");
  auto order = detail::reverse_topological(root);
  for (Node<T>* n : order)
    if (n->consumed) throw ContractError("backward through an already-consumed graph node (" + n->op + ")");
  if (root->is_leaf()) {
    root->accumulate(std::vector<T>{T(1)});
    return;
  }
  root->grad.assign(1, T(1));
  for (Node<T>* n : order) {
    if (n->is_leaf()) continue;
    if (!n->grad.empty()) n->backward_fn(*n);
  }
  // Clearing parent lists can drop the last owner of an upstream node, so hold
  // every node alive until the sweep is done.
  std::vector<std::shared_ptr<Node<T>>> keep_alive;
  for (Node<T>* n : order) keep_alive.insert(keep_alive.end(), n->parents.begin(), n->parents.end());
  for (Node<T>* n : order) {
    if (n->is_leaf()) continue;
    n->consumed = true;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

/// Text edge list of the live graph below root: one "child_id op <- parent_id op" line per edge.
template <typename T>
std::string graph_edge_list(const Tensor<T>& root) {
  std::ostringstream os;
  std::vector<Node<T>*> stack{root.node().get()};
  std::unordered_set<Node<T>*> seen;
  std::vector<std::string> lines;
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    for (const auto& p : n->parents) {
      std::ostringstream line;
      line << n->id << ' ' << n->op << " <- " << p->id << ' ' << p->op;
      lines.push_back(line.str());
      stack.push_back(p.get());
    }
  }
  std::sort(lines.begin(), lines.end());
  for (const auto& l : lines) os << l << '\n';
  return os.str();
}

template <typename T>
std::ostream& operator<<(std::ostream& os, const Tensor<T>& t) {
  os << "Tensor" << shape_str(t.shape()) << '[';
  const auto n = std::min<std::size_t>(t.numel(), 16);
  for (std::size_t i = 0; i < n; ++i) os << (i ? ", " : "") << t[i];
  if (t.numel() > n) os << ", ...";
  return os << ']';
}

}  // namespace cplae
