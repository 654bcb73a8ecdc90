#include "pc/tape.h"

namespace pc {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::tracked() const { return tape_->tracked(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, record_, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Param& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  const bool tracked = record_ && p.trainable;
  nodes_.push_back(Node{p.value, {}, tracked, {}, tracked ? &p : nullptr});
  bound_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by primitive (shape " + shape_string(value) +
                       ")");
  }
  bool tracked = false;
  if (record_) {
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw ContractError("operands recorded on different tapes");
      tracked = tracked || v.tracked();
    }
  }
  nodes_.push_back(Node{std::move(value), {}, tracked, tracked ? std::move(fn) : BackwardFn{},
                        nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id()];
  if (!n.tracked) return;
  if (g.shape() != n.value.shape()) {
    throw DimensionError("gradient shape " + shape_string(g) + " does not match value shape " +
                         shape_string(n.value));
  }
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

GradientMap Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("loss belongs to a different tape");
  const Tensor& root = nodes_[loss.id()].value;
  if (root.rows() != 1 || root.cols() != 1) {
    throw ContractError("backward() requires a scalar root, got " + shape_string(root));
  }
  if (!nodes_[loss.id()].tracked) {
    throw ContractError("backward() called on an untracked value");
  }
  for (Node& n : nodes_) n.grad = Tensor();
  nodes_[loss.id()].grad = Tensor::scalar(1.0);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.tracked || n.grad.empty() || !n.backward) continue;
    // The closure may append to other nodes' grads but never to nodes_ itself,
    // so holding a copy of the gradient is enough.
    const Tensor g = n.grad;
    n.backward(*this, g);
  }

  GradientMap out;
  for (const Node& n : nodes_) {
    if (n.param != nullptr && !n.grad.empty()) out.emplace(n.param, n.grad);
  }
  return out;
}

}  // namespace pc
