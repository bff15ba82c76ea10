#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "atlab/common.hpp"

namespace atlab {

template <typename T>
struct Node;

/// Counters for graph instrumentation. nodes_created counts every recorded
/// graph node; higher_order_grad_calls counts grad() invocations with
/// create_graph=true. Tests use these to verify that disabled regularizers
/// build no second-order graph at all.
struct GraphCounters {
  long long nodes_created = 0;
  long long higher_order_grad_calls = 0;
};

namespace detail {
inline GraphCounters& counters() {
  thread_local GraphCounters c;
  return c;
}
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline GraphCounters graph_counters() { return detail::counters(); }
inline void reset_graph_counters() { detail::counters() = GraphCounters{}; }
inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording for its scope (the no-grad idiom). Attacks run
/// their bookkeeping under this guard so perturbations carry no history.
class NoGradGuard {
public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool prev_;
};

/// Re-enables graph recording inside a NoGradGuard scope. Used by grad() when
/// create_graph is requested from inside an outer no-grad region.
class GradGuard {
public:
  explicit GradGuard(bool on) : prev_(detail::grad_mode()) { detail::grad_mode() = on; }
  ~GradGuard() { detail::grad_mode() = prev_; }

private:
  bool prev_;
};

/// N-dimensional row-major array, optionally attached to a computation graph
/// node. Copies are shallow: data is shared and immutable by convention while
/// any graph referencing it is alive. Parameter updates mutate leaf storage
/// between graph lifetimes only.
template <typename T>
class Tensor {
public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data)
      : data_(std::make_shared<std::vector<T>>(std::move(data))), shape_(std::move(shape)) {
    if (numel(shape_) != static_cast<int64_t>(data_->size()))
      throw shape_error("tensor: data length " + std::to_string(data_->size()) +
                        " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), std::vector<T>(checked_numel(shape), T(0)));
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T value) {
    auto n = checked_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
  static Tensor from(Shape shape, std::initializer_list<T> values) {
    return Tensor(std::move(shape), std::vector<T>(values));
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  const std::vector<T>& raw() const { return *data_; }
  std::vector<T>& raw() { return *data_; }
  const T* data() const { return data_->data(); }
  T* data() { return data_->data(); }
  T operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  T item() const {
    if (size() != 1) throw shape_error("item(): tensor has " + std::to_string(size()) + " elements");
    return (*data_)[0];
  }

  bool requires_grad() const { return static_cast<bool>(node); }

  /// Marks this tensor as a differentiable graph leaf.
  Tensor& set_requires_grad() {
    if (!node) {
      node = std::make_shared<Node<T>>();
      node->op = "leaf";
      node->leaf = true;
    }
    return *this;
  }

  /// Same storage, no graph attachment.
  Tensor detach() const {
    Tensor t;
    t.data_ = data_;
    t.shape_ = shape_;
    return t;
  }

  /// Deep copy with no graph attachment.
  Tensor clone() const {
    return Tensor(shape_, *data_);
  }

  /// Reinterprets the same storage under a new shape (same element count).
  /// Graph attachment is dropped; op-level reshape wires the backward.
  Tensor view_as(Shape shape) const {
    if (numel(shape) != size())
      throw shape_error("view_as: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    Tensor t;
    t.data_ = data_;
    t.shape_ = std::move(shape);
    return t;
  }

  std::shared_ptr<Node<T>> node;

private:
  static int64_t checked_numel(const Shape& s) {
    for (int64_t d : s)
      if (d < 0) throw shape_error("negative extent in shape " + shape_str(s));
    return numel(s);
  }

  std::shared_ptr<std::vector<T>> data_;
  Shape shape_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Graph node: op tag for diagnostics, parent tensors (which keep the subgraph
/// alive), and a backward function producing one gradient per parent. The
/// `need` mask tells the function which parent gradients will actually be
/// consumed; it may leave the rest undefined.
template <typename T>
struct Node {
  const char* op = "?";
  bool leaf = false;
  std::vector<Tensor<T>> parents;
  std::function<std::vector<Tensor<T>>(const Tensor<T>& g, const std::vector<char>& need)> backward;
};

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(x))
      throw numeric_error(std::string("non-finite value produced by op '") + op + "'");
}

/// Wraps freshly computed data in a tensor and records a graph node when
/// recording is enabled and any parent participates in a graph. Every op
/// funnels through here, which is also where NaN/Inf surfacing happens.
template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> data, std::vector<Tensor<T>> parents,
                  std::function<std::vector<Tensor<T>>(const Tensor<T>&, const std::vector<char>&)> backward) {
  check_finite(op, data);
  Tensor<T> out(std::move(shape), std::move(data));
  if (grad_enabled()) {
    bool track = false;
    for (const auto& p : parents)
      if (p.requires_grad()) track = true;
    if (track) {
      out.node = std::make_shared<Node<T>>();
      out.node->op = op;
      out.node->parents = std::move(parents);
      out.node->backward = std::move(backward);
      ++detail::counters().nodes_created;
    }
  }
  return out;
}

namespace detail {

// In-graph elementwise add used for gradient accumulation. Self-contained so
// the engine does not depend on the op layer.
template <typename T>
Tensor<T> accum_add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw shape_error("gradient accumulation shape mismatch: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  std::vector<T> out(a.raw());
  const T* bp = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
  return make_op<T>(
      "accum_add", a.shape(), std::move(out), {a, b},
      [](const Tensor<T>& g, const std::vector<char>&) { return std::vector<Tensor<T>>{g, g}; });
}

}  // namespace detail

/// Reverse-mode gradient of a scalar `output` with respect to `inputs`.
///
/// With create_graph=true the backward computations are themselves recorded,
/// so the returned tensors are differentiable (gradient-of-gradient). Inputs
/// that do not participate in the graph raise unless allow_disconnected is
/// set, in which case their gradient is zero.
template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& output, const std::vector<Tensor<T>>& inputs,
                            bool create_graph = false, bool allow_disconnected = false) {
  if (output.size() != 1)
    throw shape_error("grad: output must be scalar, got shape " + shape_str(output.shape()));
  for (const auto& in : inputs)
    if (!in.defined()) throw error("grad: undefined input tensor");

  std::unordered_set<const Node<T>*> input_nodes;
  for (const auto& in : inputs)
    if (in.node) input_nodes.insert(in.node.get());

  auto results_for_disconnected = [&]() {
    std::vector<Tensor<T>> r;
    r.reserve(inputs.size());
    for (const auto& in : inputs) r.push_back(Tensor<T>::zeros(in.shape()));
    return r;
  };

  if (!output.node) {
    if (allow_disconnected) return results_for_disconnected();
    throw error("grad: output does not participate in a computation graph");
  }

  // Post-order over the graph; parents precede consumers.
  std::vector<const Node<T>*> order;
  {
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<const Node<T>*, size_t>> stack;
    stack.emplace_back(output.node.get(), 0);
    seen.insert(output.node.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        const Node<T>* p = node->parents[idx].node.get();
        ++idx;
        if (p && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  // A node "needs" gradient if a requested input is reachable through it.
  std::unordered_map<const Node<T>*, char> needs;
  for (const Node<T>* n : order) {
    char v = input_nodes.count(n) ? 1 : 0;
    for (const auto& p : n->parents)
      if (!v && p.node && needs[p.node.get()]) v = 1;
    needs[n] = v;
  }

  if (create_graph) ++detail::counters().higher_order_grad_calls;
  GradGuard mode(create_graph);

  std::unordered_map<const Node<T>*, Tensor<T>> acc;
  acc[output.node.get()] = Tensor<T>::ones(output.shape());

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node<T>* n = *it;
    if (!needs[n] || n->leaf || !n->backward) continue;
    auto found = acc.find(n);
    if (found == acc.end()) continue;  // not reachable from output
    const Tensor<T>& g = found->second;

    std::vector<char> need(n->parents.size(), 0);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      const Node<T>* p = n->parents[i].node.get();
      need[i] = (p && needs[p]) ? 1 : 0;
    }
    std::vector<Tensor<T>> pgrads = n->backward(g, need);
    if (pgrads.size() != n->parents.size())
      throw error(std::string("grad: op '") + n->op + "' returned wrong gradient count");
    for (size_t i = 0; i < n->parents.size(); ++i) {
      if (!need[i] || !pgrads[i].defined()) continue;
      const auto& parent = n->parents[i];
      if (pgrads[i].shape() != parent.shape())
        throw shape_error(std::string("grad: op '") + n->op + "' produced gradient of shape " +
                          shape_str(pgrads[i].shape()) + " for parent of shape " +
                          shape_str(parent.shape()));
      const Node<T>* pn = parent.node.get();
      auto slot = acc.find(pn);
      if (slot == acc.end())
        acc.emplace(pn, pgrads[i]);
      else
        slot->second = detail::accum_add(slot->second, pgrads[i]);
    }
  }

  std::vector<Tensor<T>> results;
  results.reserve(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    const Node<T>* n = in.node.get();
    auto found = n ? acc.find(n) : acc.end();
    if (found == acc.end()) {
      if (!allow_disconnected)
        throw error("grad: input " + std::to_string(i) +
                    " does not participate in the output's graph");
      results.push_back(Tensor<T>::zeros(in.shape()));
    } else {
      results.push_back(create_graph ? found->second : found->second.detach());
    }
  }
  return results;
}

}  // namespace atlab
