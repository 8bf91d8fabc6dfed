#pragma once

// Central finite-difference oracle for taped functions. Independent of the
// adjoint rules it checks: only forward values are used.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mscot/ndiff/tape.hpp"

namespace mscot::testing {

using TapedFn = std::function<ndiff::Var(ndiff::Tape&, const std::vector<ndiff::Var>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
};

inline double evaluate(const TapedFn& fn, const std::vector<ndiff::Tensor>& inputs) {
  ndiff::Tape tape;
  std::vector<ndiff::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return fn(tape, vars).value().item();
}

// Relative error per input: ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, floor).
inline GradCheckResult grad_check(const TapedFn& fn, std::vector<ndiff::Tensor> inputs,
                                  const std::vector<bool>& check, double step = 1e-5,
                                  double floor = 1e-7) {
  ndiff::Tape tape;
  std::vector<ndiff::Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    vars.push_back(tape.leaf(inputs[i], check.empty() || check[i]));
  const ndiff::Var out = fn(tape, vars);
  const ndiff::Gradients grads = tape.backward(out);

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!check.empty() && !check[i]) continue;
    const ndiff::Tensor analytic = grads[vars[i]];
    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + step;
      const double up = evaluate(fn, inputs);
      inputs[i][j] = orig - step;
      const double down = evaluate(fn, inputs);
      inputs[i][j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[j] - numeric) * (analytic[j] - numeric);
      a2 += analytic[j] * analytic[j];
      f2 += numeric * numeric;
      result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[j] - numeric));
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(f2), floor});
    result.max_relative_error = std::max(result.max_relative_error, std::sqrt(diff2) / denom);
  }
  return result;
}

}  // namespace mscot::testing

namespace mscot::testing {

// Central differences on a plain value function; same error measure as above.
template <typename ValueFn>
double value_grad_check(const ValueFn& value_of, ndiff::Tensor x, const ndiff::Tensor& analytic,
                        double step = 1e-5, double floor = 1e-7) {
  double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + step;
    const double up = value_of(x);
    x[j] = orig - step;
    const double down = value_of(x);
    x[j] = orig;
    const double numeric = (up - down) / (2.0 * step);
    diff2 += (analytic[j] - numeric) * (analytic[j] - numeric);
    a2 += analytic[j] * analytic[j];
    f2 += numeric * numeric;
  }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(f2), floor});
}

}  // namespace mscot::testing
