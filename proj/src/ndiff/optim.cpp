#include "mscot/ndiff/optim.hpp"

#include <cmath>

namespace mscot::ndiff {

void Adam::step(ParamStore& params, const GradMap& grads) { apply(params, grads, -1.0); }

void Adam::ascend(ParamStore& params, const GradMap& grads) { apply(params, grads, 1.0); }

void Adam::apply(ParamStore& params, const GradMap& grads, double direction) {
  ++t_;
  double clip = 1.0;
  if (config_.clip_norm > 0.0) {
    const double norm = global_norm(grads);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Tensor& p = params[name];
    auto [mit, mnew] = m_.try_emplace(name, Tensor(p.shape()));
    auto [vit, vnew] = v_.try_emplace(name, Tensor(p.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
      if (config_.weight_decay > 0.0) p[i] -= config_.lr * config_.weight_decay * p[i];
      p[i] += direction * config_.lr * update;
    }
  }
}

}  // namespace mscot::ndiff
