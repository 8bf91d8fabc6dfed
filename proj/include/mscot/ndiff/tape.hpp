#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mscot/ndiff/tensor.hpp"

namespace mscot::ndiff {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; becomes stale when the
// owning tape is cleared or destroyed.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id, std::uint64_t generation)
      : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
  std::uint64_t generation_ = 0;
};

// View handed to an operation's adjoint rule during the backward sweep.
class BackwardContext {
 public:
  const Tensor& grad() const { return *grad_; }
  const Tensor& value() const { return *value_; }
  const Tensor& input(std::size_t i) const;
  bool needs(std::size_t i) const;
  // Accumulator for the adjoint of input i, zero-initialised on first use.
  Tensor& input_grad(std::size_t i);

 private:
  friend class Tape;
  Tape* tape_ = nullptr;
  const std::vector<std::uint32_t>* inputs_ = nullptr;
  const Tensor* grad_ = nullptr;
  const Tensor* value_ = nullptr;
  std::vector<Tensor>* grads_ = nullptr;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Gradients {
 public:
  // Adjoint of `v`; a zero array when `v` does not influence the output.
  Tensor operator[](const Var& v) const;
  bool has(const Var& v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::uint64_t generation_ = 0;
  std::vector<Tensor> grads_;
};

// Linear record of executed primitives. Rebuilt for every forward pass.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an operation. `fn` is dropped when no input requires a gradient.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  Gradients backward(const Var& output);

  // Drops every node; outstanding Vars become stale.
  void clear();

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }
  // Number of adjoint rules run by the last backward().
  std::size_t last_backward_visits() const { return last_visits_; }

  const Tensor& value_of(const Var& v) const;
  bool requires_grad_of(const Var& v) const;

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check(const Var& v) const;

  std::vector<Node> nodes_;
  std::uint64_t generation_;
  std::size_t last_visits_ = 0;
};

}  // namespace mscot::ndiff
