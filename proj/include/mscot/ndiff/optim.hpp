#pragma once

#include <map>
#include <string>

#include "mscot/ndiff/params.hpp"

namespace mscot::ndiff {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
  double clip_norm = 0.0;     // 0 disables global-norm clipping
};

// Adaptive-moment descent over named parameters.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  // Applies one descent step using `grads` (missing names are skipped).
  void step(ParamStore& params, const GradMap& grads);
  // Ascent variant: moves along +grad.
  void ascend(ParamStore& params, const GradMap& grads);

  std::size_t steps() const { return t_; }
  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }

 private:
  void apply(ParamStore& params, const GradMap& grads, double direction);

  AdamConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace mscot::ndiff
