#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mscot/ndiff/tape.hpp"

namespace mscot::ndiff {

// Named parameter tensors in insertion order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& operator[](const std::string& name);
  const Tensor& operator[](const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t scalar_count() const;

  bool operator==(const ParamStore& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

using GradMap = std::map<std::string, Tensor>;

// Lazily registers parameters of a store on a tape, as trainable leaves or
// as constants.
class Binding {
 public:
  Binding(Tape& tape, const ParamStore& store, bool trainable)
      : tape_(tape), store_(store), trainable_(trainable) {}

  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }
  bool trainable() const { return trainable_; }

  // Adjoints of every bound trainable parameter.
  GradMap gradients(const Gradients& grads) const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool trainable_;
  std::unordered_map<std::string, Var> bound_;
};

void accumulate(GradMap& into, const GradMap& from, double weight = 1.0);
double global_norm(const GradMap& grads);

}  // namespace mscot::ndiff
