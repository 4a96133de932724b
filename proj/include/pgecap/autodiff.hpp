#pragma once

// Minimal reverse-mode automatic differentiation over dense double arrays.
//
// A Tape owns every intermediate value produced while evaluating a loss.
// Var is a cheap handle (tape pointer + node index). Nodes are appended in
// evaluation order, so a single reverse sweep visits each node after all of
// its consumers.

#include <cassert>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "pgecap/tensor.hpp"

namespace pgecap::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  double item() const;
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient flowing into the node's output.
  using Backward = std::function<void(const std::vector<double>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }
  Var variable(Tensor value) { return push(std::move(value), true, {}); }

  /// Records an op result. `backward` is dropped when no input needs grad.
  Var record(Tensor value, bool requires_grad, Backward backward) {
    return push(std::move(value), requires_grad,
                requires_grad ? std::move(backward) : Backward{});
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer for `v`, allocated (zeroed) on first use.
  std::vector<double>& grad_buffer(const Var& v) {
    Node& n = nodes_[v.id()];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  void accumulate(const Var& v, std::span<const double> g) {
    if (!v.requires_grad()) return;
    auto& buf = grad_buffer(v);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
  }

  /// Reverse sweep from a scalar output. Clears gradients from earlier sweeps.
  void backward(const Var& output) {
    if (output.size() != 1) {
      throw ShapeError("backward expects a scalar output, got shape " +
                       to_string(output.shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    grad_buffer(output)[0] = 1.0;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(n.grad);
    }
  }

  /// d(output)/d(wrt) after backward(); zeros when no path exists.
  Tensor gradient(const Var& wrt) const {
    const Node& n = nodes_[wrt.id()];
    if (n.grad.empty()) return Tensor(n.value.shape);
    return Tensor(n.value.shape, n.grad);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
    std::vector<double> grad;
  };

  Var push(Tensor value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(backward), {}});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }
inline double Var::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + to_string(shape()));
  return value()[0];
}

}  // namespace pgecap::ad
