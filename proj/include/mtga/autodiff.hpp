#pragma once
// Reverse-mode automatic differentiation over Tensor<T>. Dynamic tape: every
// op produces a node holding its value, parent edges and a vjp closure. The
// vjp of each op is itself written in terms of ops, so calling backward with
// create_graph=true yields gradients that are differentiable again (exact
// higher-order derivatives). With create_graph=false the vjp closures run
// under a no-grad guard and reduce to plain kernel arithmetic.

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtga/tensor.hpp"

namespace mtga {

template <typename T>
class Var;

template <typename T>
using VjpFn = std::function<std::vector<Var<T>>(const Var<T>& gout, const Var<T>& out)>;

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<Var<T>> parents;
  VjpFn<T> vjp;  // empty for leaves and constants
  bool requires_grad = false;
  bool leaf = false;
  std::string name;
};

// Thread-local grad mode. Ops record the tape only while enabled.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct GradModeGuard {
  bool prev;
  explicit GradModeGuard(bool enable) : prev(grad_mode_flag()) { grad_mode_flag() = enable; }
  ~GradModeGuard() { grad_mode_flag() = prev; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;
};

template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> v) {
    Var out;
    out.n_ = std::make_shared<Node<T>>();
    out.n_->value = std::move(v);
    return out;
  }

  static Var leaf(Tensor<T> v, std::string name = {}) {
    Var out;
    out.n_ = std::make_shared<Node<T>>();
    out.n_->value = std::move(v);
    out.n_->requires_grad = true;
    out.n_->leaf = true;
    out.n_->name = std::move(name);
    return out;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor<T>& val() const { return n_->value; }
  const Shape& shape() const { return n_->value.shape(); }
  std::int64_t numel() const { return n_->value.numel(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  Node<T>* node() const { return n_.get(); }
  const Var& parent(std::size_t i) const { return n_->parents[i]; }
  std::size_t num_parents() const { return n_->parents.size(); }

  // Same value, no history.
  Var detach() const { return constant(n_->value); }

  T item() const {
    if (numel() != 1) throw std::logic_error("Var::item on non-scalar");
    return n_->value[0];
  }

  static Var make_node(Tensor<T> value, std::vector<Var> parents, VjpFn<T> vjp) {
    bool track = grad_enabled();
    if (track) {
      track = false;
      for (const auto& p : parents)
        if (p.requires_grad()) {
          track = true;
          break;
        }
    }
    if (!track) return constant(std::move(value));  // drops parent refs
    Var out;
    out.n_ = std::make_shared<Node<T>>();
    out.n_->value = std::move(value);
    out.n_->parents = std::move(parents);
    out.n_->vjp = std::move(vjp);
    out.n_->requires_grad = true;
    return out;
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);  // defined in ops.hpp

// Gradients keyed by node identity.
template <typename T>
class GradMap {
 public:
  void set(const Node<T>* n, Var<T> g) { g_[n] = std::move(g); }

  bool contains(const Var<T>& v) const { return g_.count(v.node()) != 0; }

  // Gradient of the root w.r.t. v; throws if v was not reached.
  const Var<T>& at(const Var<T>& v) const {
    auto it = g_.find(v.node());
    if (it == g_.end()) throw std::logic_error("GradMap::at: no gradient recorded for node");
    return it->second;
  }

  // Gradient tensor, or zeros of v's shape if unreached.
  Tensor<T> grad_or_zero(const Var<T>& v) const {
    auto it = g_.find(v.node());
    if (it == g_.end()) return Tensor<T>::zeros(v.shape());
    return it->second.val();
  }

  Var<T>* find(const Node<T>* n) {
    auto it = g_.find(n);
    return it == g_.end() ? nullptr : &it->second;
  }

 private:
  std::unordered_map<const Node<T>*, Var<T>> g_;
};

namespace detail {

template <typename T>
void topo_collect(const Var<T>& root, std::vector<Var<T>>& order) {
  // Iterative post-order DFS restricted to grad-requiring nodes.
  std::unordered_map<const Node<T>*, int> state;  // 0 unseen, 1 open/done
  std::vector<std::pair<Var<T>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  state[root.node()] = 1;
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n.num_parents()) {
      const Var<T>& p = n.parent(idx++);
      if (p.requires_grad() && state[p.node()] == 0) {
        state[p.node()] = 1;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar (or any-shape) root. Returns gradients for
// every grad-requiring node reached, including intermediates. When
// create_graph is true the returned gradients are themselves differentiable.
template <typename T>
GradMap<T> backward(const Var<T>& root, bool create_graph = false) {
  GradMap<T> grads;
  if (!root.requires_grad()) return grads;
  std::vector<Var<T>> order;
  detail::topo_collect(root, order);

  grads.set(root.node(), Var<T>::constant(Tensor<T>::full(root.shape(), T(1))));

  GradModeGuard guard(create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Var<T>& out_var = *it;
    Node<T>* n = out_var.node();
    Var<T>* gp = grads.find(n);
    if (gp == nullptr || !n->vjp) continue;
    std::vector<Var<T>> pgrads = n->vjp(*gp, out_var);
    if (pgrads.size() != n->parents.size())
      throw std::logic_error("vjp returned wrong number of parent gradients");
    for (std::size_t i = 0; i < pgrads.size(); ++i) {
      const Var<T>& parent = n->parents[i];
      if (!parent.requires_grad() || !pgrads[i].defined()) continue;
      if (Var<T>* acc = grads.find(parent.node()))
        *acc = add(*acc, pgrads[i]);
      else
        grads.set(parent.node(), pgrads[i]);
    }
  }
  return grads;
}

}  // namespace mtga
