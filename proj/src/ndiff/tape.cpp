#include "mscot/ndiff/tape.hpp"

#include <atomic>

#include "mscot/common/error.hpp"

namespace mscot::ndiff {

namespace {

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw StaleTapeError("use of an unbound Var");
  return tape_->value_of(*this);
}

bool Var::requires_grad() const {
  if (!tape_) throw StaleTapeError("use of an unbound Var");
  return tape_->requires_grad_of(*this);
}

const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_->nodes_[(*inputs_)[i]].value;
}

bool BackwardContext::needs(std::size_t i) const {
  return tape_->nodes_[(*inputs_)[i]].requires_grad;
}

Tensor& BackwardContext::input_grad(std::size_t i) {
  const std::uint32_t id = (*inputs_)[i];
  Tensor& g = (*grads_)[id];
  if (g.empty() && !tape_->nodes_[id].value.empty()) {
    g = Tensor(tape_->nodes_[id].value.shape());
  }
  return g;
}

Tensor Gradients::operator[](const Var& v) const {
  if (v.tape() != tape_ || v.generation() != generation_) {
    throw StaleTapeError("gradient lookup for a Var from another tape");
  }
  const Tensor& g = grads_[v.id()];
  if (g.empty()) return Tensor(v.shape());
  return g;
}

bool Gradients::has(const Var& v) const {
  return v.tape() == tape_ && v.generation() == generation_ && !grads_[v.id()].empty();
}

Tape::Tape() : generation_(next_generation()) {}

Tape::~Tape() = default;

void Tape::check(const Var& v) const {
  if (v.tape_ != this || v.generation_ != generation_ || v.id_ >= nodes_.size()) {
    throw StaleTapeError("Var does not belong to the current tape");
  }
}

const Tensor& Tape::value_of(const Var& v) const {
  check(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad_of(const Var& v) const {
  check(v);
  return nodes_[v.id_].requires_grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value entering the tape");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), generation_);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check(in);
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (!value.all_finite()) throw NumericError("operation produced a non-finite value");
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), generation_);
}

Gradients Tape::backward(const Var& output) {
  if (output.tape_ != this || output.generation_ != generation_ ||
      output.id_ >= nodes_.size()) {
    throw StaleTapeError("backward() called with an output not on this tape");
  }
  if (nodes_[output.id_].value.size() != 1) {
    throw ContractViolation("backward() requires a scalar output, got " +
                            shape_string(nodes_[output.id_].value.shape()));
  }
  Gradients result;
  result.tape_ = this;
  result.generation_ = generation_;
  result.grads_.resize(nodes_.size());
  result.grads_[output.id_] = Tensor(nodes_[output.id_].value.shape(), 1.0);

  last_visits_ = 0;
  BackwardContext ctx;
  ctx.tape_ = this;
  ctx.grads_ = &result.grads_;
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || result.grads_[i].empty()) continue;
    ctx.inputs_ = &node.inputs;
    ctx.grad_ = &result.grads_[i];
    ctx.value_ = &node.value;
    node.backward(ctx);
    ++last_visits_;
  }
  return result;
}

void Tape::clear() {
  nodes_.clear();
  generation_ = next_generation();
}

}  // namespace mscot::ndiff
