#include "mscot/guidance/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <spdlog/spdlog.h>

#include "mscot/common/error.hpp"
#include "mscot/ndiff/ops.hpp"
#include "mscot/prior/prior.hpp"
#include "mscot/quantizer/codebook.hpp"
#include "mscot/quantizer/multiscale.hpp"

namespace mscot::guidance {

using ndiff::Tape;
using ndiff::Tensor;
using ndiff::Var;

double ScaleObjective::value(const Tensor& embeddings) const {
  Tape tape;
  const Var out = fn_(tape, tape.constant(embeddings));
  ++passes_.forward;
  return out.value().item();
}

ScaleObjective::ValueGrad ScaleObjective::value_and_gradient(const Tensor& embeddings) const {
  Tape tape;
  const Var e = tape.leaf(embeddings);
  const Var out = fn_(tape, e);
  const auto grads = tape.backward(out);
  ++passes_.backward;
  return {out.value().item(), grads[e]};
}

ScaleObjective vqvae_objective(const vqvae::VqvaeModel& model, const quantizer::ScaleSchedule& schedule,
                               std::size_t k, Tensor prefix_features, goals::GoalPtr goal,
                               EmbeddingTransform transform) {
  if (!goal) throw ConfigError("guidance objective needs a goal");
  if (k >= schedule.scales()) throw LengthError("scale index outside the schedule");
  const std::size_t final_len = schedule.final_length();
  if (prefix_features.rows() != final_len || prefix_features.cols() != model.config.quant.code_dim)
    throw ShapeError("prefix features must be " + std::to_string(final_len) + " x " +
                     std::to_string(model.config.quant.code_dim));
  return ScaleObjective([&model, k, final_len, prefix = std::move(prefix_features), goal = std::move(goal),
                         transform = std::move(transform)](Tape& tape, const Var& e) {
    ndiff::Binding b(tape, model.params, false);
    const Var input = transform ? transform(tape, k, e) : e;
    const Var features = ndiff::add(tape.constant(prefix), quantizer::scale_contribution(b, k, input, final_len));
    return goals::goal_on_tape(*goal, vqvae::decode(b, model.config, features));
  });
}

Tensor exact_posterior_row(std::span<const double> prior_row, std::span<const double> loglik) {
  if (prior_row.size() != loglik.size()) throw ShapeError("prior row and log-likelihoods differ in length");
  const std::size_t V = prior_row.size();
  std::vector<double> logw(V, -std::numeric_limits<double>::infinity());
  double top = -std::numeric_limits<double>::infinity();
  bool constant = true;
  std::optional<double> first;
  for (std::size_t v = 0; v < V; ++v) {
    if (prior_row[v] < 0) throw ContractViolation("negative prior probability");
    if (prior_row[v] == 0 || std::isnan(loglik[v])) continue;
    if (!first) first = loglik[v];
    constant = constant && loglik[v] == *first;
    logw[v] = std::log(prior_row[v]) + loglik[v];
    top = std::max(top, logw[v]);
  }
  if (!std::isfinite(top)) throw UnderflowError("every candidate has zero posterior weight");
  Tensor out({1, V});
  if (constant) {
    // Uniform reweighting leaves the prior untouched.
    std::copy(prior_row.begin(), prior_row.end(), out.data().begin());
    return out;
  }
  double total = 0;
  for (std::size_t v = 0; v < V; ++v) total += out[v] = std::exp(logw[v] - top);
  for (std::size_t v = 0; v < V; ++v) out[v] /= total;
  return out;
}

namespace {

void check_shapes(const Tensor& probs, const Tensor& codebook) {
  ndiff::require_matrix(probs, "guidance probabilities");
  ndiff::require_matrix(codebook, "codebook");
  if (probs.cols() != codebook.rows())
    throw ShapeError("distribution over " + std::to_string(probs.cols()) + " codes but codebook has " +
                     std::to_string(codebook.rows()));
}

void set_row(Tensor& dst, std::size_t r, const Tensor& row) {
  std::copy(row.data().begin(), row.data().end(), dst.row(r).begin());
}

}  // namespace

Tensor expansion_points(const Tensor& probs, const Tensor& codebook, Expansion expansion) {
  check_shapes(probs, codebook);
  if (expansion == Expansion::kMean) return ndiff::kernels::matmul(probs, codebook);
  Tensor out({probs.rows(), codebook.cols()});
  for (std::size_t l = 0; l < probs.rows(); ++l) {
    const auto row = probs.row(l);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    std::copy(codebook.row(best).begin(), codebook.row(best).end(), out.row(l).begin());
  }
  return out;
}

Tensor exact_posterior(const Tensor& probs, const Tensor& codebook, const ScaleObjective& objective,
                       const Tensor& expansion) {
  check_shapes(probs, codebook);
  if (expansion.shape() != ndiff::Shape{probs.rows(), codebook.cols()})
    throw ShapeError("expansion points must be L' x d");
  const std::size_t L = probs.rows(), V = probs.cols();
  Tensor out({L, V});
  std::vector<double> loglik(V);
  Tensor candidate = expansion;
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t v = 0; v < V; ++v) {
      std::copy(codebook.row(v).begin(), codebook.row(v).end(), candidate.row(l).begin());
      loglik[v] = objective.value(candidate);
    }
    std::copy(expansion.row(l).begin(), expansion.row(l).end(), candidate.row(l).begin());
    set_row(out, l, exact_posterior_row(probs.row(l), loglik));
  }
  return out;
}

Tensor reweight(const Tensor& probs, const Tensor& codebook, const Tensor& expansion, const Tensor& gradient) {
  check_shapes(probs, codebook);
  const std::size_t L = probs.rows(), V = probs.cols();
  if (gradient.shape() != expansion.shape() || expansion.shape() != ndiff::Shape{L, codebook.cols()})
    throw ShapeError("expansion points and gradients must be L' x d");
  const Tensor scores = ndiff::kernels::matmul_nt(gradient, codebook);  // L' x V
  Tensor out({L, V});
  std::vector<double> loglik(V);
  for (std::size_t l = 0; l < L; ++l) {
    const double anchor = ndiff::dot(expansion.row(l), gradient.row(l));
    for (std::size_t v = 0; v < V; ++v) loglik[v] = scores.at(l, v) - anchor;
    set_row(out, l, exact_posterior_row(probs.row(l), loglik));
  }
  return out;
}

GuidedDistribution first_order_posterior(const Tensor& probs, const Tensor& codebook,
                                         const ScaleObjective& objective, const FirstOrderConfig& config) {
  GuidedDistribution out;
  out.expansion = expansion_points(probs, codebook, config.expansion);
  ScaleObjective::ValueGrad vg;
  try {
    vg = objective.value_and_gradient(out.expansion);
  } catch (const NumericError& e) {
    vg.value = std::numeric_limits<double>::quiet_NaN();
  }
  if (!std::isfinite(vg.value) || !vg.gradient.all_finite()) {
    spdlog::warn("goal is not finite at the expansion points; guidance skipped for this scale");
    out.probs = probs;
    out.gradient = Tensor(out.expansion.shape());
    out.goal = vg.value;
    out.skipped = true;
    return out;
  }
  out.goal = vg.value;
  out.gradient = std::move(vg.gradient);
  out.gradient *= config.grad_scale;
  out.probs = reweight(probs, codebook, out.expansion, out.gradient);
  return out;
}

Mode parse_mode(const std::string& text) {
  if (text == "off") return Mode::kOff;
  if (text == "first_order") return Mode::kFirstOrder;
  if (text == "exact") return Mode::kExact;
  throw ConfigError("unknown guidance mode '" + text + "' (expected off, first_order or exact)");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kOff: return "off";
    case Mode::kFirstOrder: return "first_order";
    case Mode::kExact: return "exact";
  }
  return "?";
}

StepResult guided_scale_step(const Tensor& probs, const Tensor& codebook, const ScaleObjective* objective,
                             const StepConfig& config, Rng& rng) {
  StepResult out;
  if (config.mode == Mode::kOff) {
    out.probs = probs;
    out.tokens = prior::sample_rows(probs, rng);
    return out;
  }
  if (!objective) throw ConfigError("guided sampling needs an objective");
  const DecoderPasses before = objective->passes();
  if (config.mode == Mode::kExact) {
    const std::size_t cost = probs.rows() * probs.cols();
    if (cost > config.exact_cost_guard)
      throw CostGuardError("exact posterior needs " + std::to_string(cost) +
                           " decoder passes for this scale, above the guard of " +
                           std::to_string(config.exact_cost_guard) +
                           "; use first_order mode or raise the guard");
    const Tensor expansion = expansion_points(probs, codebook, config.first_order.expansion);
    out.probs = exact_posterior(probs, codebook, *objective, expansion);
  } else {
    auto gd = first_order_posterior(probs, codebook, *objective, config.first_order);
    out.probs = std::move(gd.probs);
    out.skipped = gd.skipped;
  }
  out.passes = {objective->passes().forward - before.forward, objective->passes().backward - before.backward};
  prior::check_distribution(out.probs);
  out.tokens = prior::sample_rows(out.probs, rng);
  return out;
}

double kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape()) throw ShapeError("KL arguments differ in shape");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (q[i] <= 0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

namespace {

// Orthonormal d x d matrix from Gram-Schmidt on Gaussian columns.
Tensor random_orthogonal(std::size_t d, Rng& rng) {
  Tensor q({d, d});
  for (std::size_t c = 0; c < d; ++c) {
    for (;;) {
      std::vector<double> v(d);
      for (auto& x : v) x = rng.normal();
      for (std::size_t p = 0; p < c; ++p) {
        double proj = 0;
        for (std::size_t r = 0; r < d; ++r) proj += v[r] * q.at(r, p);
        for (std::size_t r = 0; r < d; ++r) v[r] -= proj * q.at(r, p);
      }
      double n = 0;
      for (double x : v) n += x * x;
      n = std::sqrt(n);
      if (n < 1e-6) continue;
      for (std::size_t r = 0; r < d; ++r) q.at(r, c) = v[r] / n;
      break;
    }
  }
  return q;
}

}  // namespace

BoundReport verify_bound(const BoundConfig& config) {
  if (config.max_vocab < 2 || config.max_dim < 1) throw ConfigError("bound instances need V >= 2 and d >= 1");
  BoundReport report;
  for (std::size_t i = 0; i < config.instances; ++i) {
    Rng rng(mix_seed(substream(config.seed, "guidance.bound") + i));
    const std::size_t V = rng.index(2, config.max_vocab), d = rng.index(1, config.max_dim);

    Tensor codebook({V, d});
    for (auto& x : codebook.data()) x = rng.normal();
    if (config.normalized) quantizer::normalize_rows(codebook);

    Tensor logits({1, V});
    for (auto& x : logits.data()) x = rng.normal(0.0, 1.5);
    const Tensor probs = ndiff::kernels::softmax_rows(logits);

    // phi(e) = -1/2 (e - m)^T A (e - m), A = Q diag(lambda) Q^T.
    const Tensor q = random_orthogonal(d, rng);
    std::vector<double> lambda(d);
    for (auto& l : lambda) l = rng.uniform(-config.max_curvature, config.max_curvature);
    Tensor a({d, d});
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c)
        for (std::size_t j = 0; j < d; ++j) a.at(r, c) += q.at(r, j) * lambda[j] * q.at(c, j);
    Tensor m({1, d});
    for (auto& x : m.data()) x = rng.normal();

    const ScaleObjective objective([&](Tape& tape, const Var& e) {
      const Var diff = ndiff::sub(e, tape.constant(m));
      return ndiff::scale(ndiff::sum(ndiff::mul(ndiff::matmul(diff, tape.constant(a)), diff)), -0.5);
    });

    const GuidedDistribution approx = first_order_posterior(probs, codebook, objective);
    const Tensor exact = exact_posterior(probs, codebook, objective, approx.expansion);

    BoundInstance inst;
    inst.vocab = V;
    inst.dim = d;
    for (double l : lambda) inst.curvature = std::max(inst.curvature, std::abs(l));
    for (std::size_t v = 0; v < V; ++v) {
      const double dist = ndiff::squared_distance(codebook.row(v), approx.expansion.row(0));
      inst.sup_distance = std::max(inst.sup_distance, dist);
      inst.expected_distance += (exact[v] + approx.probs[v]) * dist;
    }
    inst.kl = kl_divergence(exact, approx.probs);
    inst.sup_bound = inst.curvature * inst.sup_distance;
    inst.expectation_bound = 0.5 * inst.curvature * inst.expected_distance;
    inst.violated = !(inst.kl <= inst.sup_bound && inst.kl <= inst.expectation_bound);
    report.violations += inst.violated;
    report.mean_kl += inst.kl / static_cast<double>(config.instances);
    report.max_kl = std::max(report.max_kl, inst.kl);
    report.instances.push_back(inst);
  }
  return report;
}

nlohmann::json BoundReport::to_json(bool with_instances) const {
  nlohmann::json j{{"instances", instances.size()},
                   {"violations", violations},
                   {"mean_kl", mean_kl},
                   {"max_kl", max_kl}};
  if (!per_scale_kl.empty()) j["per_scale_kl"] = per_scale_kl;
  if (with_instances) {
    auto& rows = j["instance_rows"] = nlohmann::json::array();
    for (const auto& i : instances)
      rows.push_back({{"vocab", i.vocab},
                      {"dim", i.dim},
                      {"curvature", i.curvature},
                      {"sup_distance", i.sup_distance},
                      {"kl", i.kl},
                      {"sup_bound", i.sup_bound},
                      {"expectation_bound", i.expectation_bound},
                      {"violated", i.violated}});
  }
  return j;
}

}  // namespace mscot::guidance
