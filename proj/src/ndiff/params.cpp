#include "mscot/ndiff/params.hpp"

#include <cmath>

#include "mscot/common/error.hpp"

namespace mscot::ndiff {

void ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

Tensor& ParamStore::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return values_[it->second];
}

const Tensor& ParamStore::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return values_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

Var Binding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(store_[name], trainable_);
  bound_.emplace(name, v);
  return v;
}

GradMap Binding::gradients(const Gradients& grads) const {
  GradMap out;
  if (!trainable_) return out;
  for (const auto& [name, var] : bound_) out.emplace(name, grads[var]);
  return out;
}

void accumulate(GradMap& into, const GradMap& from, double weight) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, g * weight);
    } else {
      Tensor& dst = it->second;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * g[i];
    }
  }
}

double global_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace mscot::ndiff
