#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "hmflow/tensor.hpp"

namespace hmflow {

// Handle into a Graph. Creation order is a topological order by
// construction, which is what backward() relies on.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. One Graph per forward pass; ops append nodes and
// register a closure that scatters the node's gradient to its parents.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Value self)>;

  // Untracked input (no gradient ever flows into it).
  Value constant(Tensor t) { return push(std::move(t), false, nullptr); }

  // Tracked input; grad(v) is populated by backward().
  Value leaf(Tensor t) { return push(std::move(t), true, nullptr); }

  Value make(Tensor out, const std::vector<Value>& parents, BackwardFn back) {
    bool tracked = false;
    for (Value p : parents) tracked = tracked || needs_grad(p);
    return push(std::move(out), tracked, tracked ? std::move(back) : nullptr);
  }

  const Tensor& value(Value v) const { return nodes_[v.id].val; }
  Tensor& mutable_value(Value v) { return nodes_[v.id].val; }

  bool needs_grad(Value v) const { return nodes_[v.id].needs_grad; }

  // Gradient of v after backward(); zeros if no path reached it.
  const Tensor& grad(Value v) const {
    Node& n = const_cast<Node&>(nodes_[v.id]);
    if (!n.grad.defined()) n.grad = Tensor(n.val.shape());
    return n.grad;
  }

  // Accumulation buffer used by backward closures.
  Tensor& grad_buffer(Value v) {
    Node& n = nodes_[v.id];
    if (!n.grad.defined()) n.grad = Tensor(n.val.shape());
    return n.grad;
  }
  bool grad_touched(Value v) const { return nodes_[v.id].grad.defined(); }

  // Runs reverse accumulation from a scalar root.
  void backward(Value root) {
    if (value(root).numel() != 1)
      throw ShapeError("backward root must be a scalar");
    grad_buffer(root)[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.back || !n.grad.defined()) continue;
      n.back(*this, Value{i});
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;  // lazily allocated
    bool needs_grad = false;
    BackwardFn back;
  };

  Value push(Tensor t, bool needs_grad, BackwardFn back) {
    nodes_.push_back(Node{std::move(t), Tensor{}, needs_grad, std::move(back)});
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  // deque: references returned by value()/grad() stay valid while new
  // nodes are appended during graph construction.
  std::deque<Node> nodes_;
};

// ---- elementwise / reduction primitives shared by the network code ----

Value add(Graph& g, Value a, Value b);
Value scale(Graph& g, Value a, double c);
Value sum_squares(Graph& g, Value x);  // scalar
Value detach(Graph& g, Value x);       // value copy, gradient barrier

}  // namespace hmflow
