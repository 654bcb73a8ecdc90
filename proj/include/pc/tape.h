#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "pc/tensor.h"

namespace pc {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  bool tracked() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using GradientMap = std::unordered_map<const Param*, Tensor>;

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward() simply walks the node list in reverse.
///
/// A tape built with record == false never tracks anything: params and
/// variables are bound as constants and no backward closures are stored.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  /// Tracked leaf that is not a Param (used by grad_check and tests).
  Var variable(Tensor value);
  /// Binds a Param. The same Param always maps to the same node on one tape.
  Var param(Param& p);

  /// Appends the result of a primitive. The node is tracked iff the tape is
  /// recording and any input is tracked; `fn` is dropped otherwise.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Propagates d(loss)/d(node) to every tracked node and returns the
  /// gradients of trainable Params reachable from `loss`.
  GradientMap backward(Var loss);

  /// Adds `g` into the gradient accumulator of `v`; no-op for untracked vars.
  void accumulate(Var v, const Tensor& g);
  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool tracked = false;
    BackwardFn backward;
    const Param* param = nullptr;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> bound_;
};

}  // namespace pc
