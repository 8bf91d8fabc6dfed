#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscot/common/rng.hpp"
#include "mscot/goals/goals.hpp"
#include "mscot/ndiff/tape.hpp"
#include "mscot/quantizer/schedule.hpp"
#include "mscot/vqvae/vqvae.hpp"

namespace mscot::guidance {

struct DecoderPasses {
  std::size_t forward = 0;   // value-only evaluations
  std::size_t backward = 0;  // forward-backward evaluations
  bool operator==(const DecoderPasses&) const = default;
};

// log p(G | x) as a function of one scale's embeddings (L'_k x d), with the
// prefix and all model weights held fixed. Counts every decoder evaluation.
class ScaleObjective {
 public:
  using Fn = std::function<ndiff::Var(ndiff::Tape&, const ndiff::Var& embeddings)>;

  explicit ScaleObjective(Fn fn) : fn_(std::move(fn)) {}

  double value(const ndiff::Tensor& embeddings) const;
  struct ValueGrad {
    double value = 0;
    ndiff::Tensor gradient;
  };
  ValueGrad value_and_gradient(const ndiff::Tensor& embeddings) const;

  const DecoderPasses& passes() const { return passes_; }
  void reset_passes() { passes_ = {}; }

 private:
  Fn fn_;
  mutable DecoderPasses passes_;
};

// Optional on-tape map applied to scale-k embeddings before the post-conv
// (the token refiner plugs in here).
using EmbeddingTransform =
    std::function<ndiff::Var(ndiff::Tape&, std::size_t k, const ndiff::Var& embeddings)>;

// Objective that decodes prefix_features + contribution_k(transform(E)) with
// the frozen tokenizer and scores the motion with `goal`.
ScaleObjective vqvae_objective(const vqvae::VqvaeModel& model, const quantizer::ScaleSchedule& schedule,
                               std::size_t k, ndiff::Tensor prefix_features, goals::GoalPtr goal,
                               EmbeddingTransform transform = nullptr);

// Posterior of one position: prior_row reweighted by exp(loglik), in log
// space. UnderflowError when no candidate keeps a finite positive weight.
ndiff::Tensor exact_posterior_row(std::span<const double> prior_row, std::span<const double> loglik);

enum class Expansion { kMean, kArgmax };

// Expansion embeddings per position: prior mean of the codebook rows, or the
// row of the most probable code.
ndiff::Tensor expansion_points(const ndiff::Tensor& probs, const ndiff::Tensor& codebook,
                               Expansion expansion = Expansion::kMean);

// Brute force over every (position, code) pair: the candidate code replaces
// its position while the other positions sit at `expansion`. V * L' decoder
// forwards.
ndiff::Tensor exact_posterior(const ndiff::Tensor& probs, const ndiff::Tensor& codebook,
                              const ScaleObjective& objective, const ndiff::Tensor& expansion);

struct FirstOrderConfig {
  double grad_scale = 1.0;
  Expansion expansion = Expansion::kMean;
};

struct GuidedDistribution {
  ndiff::Tensor probs;      // L' x V
  ndiff::Tensor expansion;  // L' x d
  ndiff::Tensor gradient;   // L' x d, already multiplied by grad_scale
  double goal = 0;          // log p(G | decode(expansion))
  bool skipped = false;     // goal was non-finite; probs equal the prior
};

// Reweights each prior row by exp((e_v - ebar)^T grad) using the gradient of
// one decoder forward-backward at the expansion points.
GuidedDistribution first_order_posterior(const ndiff::Tensor& probs, const ndiff::Tensor& codebook,
                                         const ScaleObjective& objective,
                                         const FirstOrderConfig& config = {});

// Reweighting with a given gradient (no decoder call).
ndiff::Tensor reweight(const ndiff::Tensor& probs, const ndiff::Tensor& codebook,
                       const ndiff::Tensor& expansion, const ndiff::Tensor& gradient);

enum class Mode { kOff, kFirstOrder, kExact };
Mode parse_mode(const std::string& text);
std::string to_string(Mode mode);

struct StepConfig {
  Mode mode = Mode::kFirstOrder;
  FirstOrderConfig first_order;
  // Refuse exact mode above this many candidate evaluations per scale.
  std::size_t exact_cost_guard = 4096;
};

struct StepResult {
  std::vector<std::size_t> tokens;
  ndiff::Tensor probs;
  DecoderPasses passes;
  bool skipped = false;
};

// Builds the guided distribution for one scale and samples every position.
// `objective` may be null only in mode off.
StepResult guided_scale_step(const ndiff::Tensor& probs, const ndiff::Tensor& codebook,
                             const ScaleObjective* objective, const StepConfig& config, Rng& rng);

// KL(p || q) over one or more rows (summed). Infinite when q drops support of p.
double kl_divergence(const ndiff::Tensor& p, const ndiff::Tensor& q);

struct BoundInstance {
  std::size_t vocab = 0, dim = 0;
  double curvature = 0;          // C = max |eigenvalue|
  double sup_distance = 0;       // max_v ||e_v - a||^2
  double expected_distance = 0;  // (E_p* + E_q) ||e - a||^2
  double kl = 0;
  double sup_bound = 0;          // C * sup_distance
  double expectation_bound = 0;  // C / 2 * expected_distance
  bool violated = false;
};

struct BoundReport {
  std::vector<BoundInstance> instances;
  std::size_t violations = 0;
  double mean_kl = 0;
  double max_kl = 0;
  // kl-diag only: average per-position KL for each scale.
  std::vector<double> per_scale_kl;
  nlohmann::json to_json(bool with_instances = false) const;
};

struct BoundConfig {
  std::size_t instances = 1000;
  std::size_t max_vocab = 32;
  std::size_t max_dim = 8;
  bool normalized = false;
  double max_curvature = 2.0;
  std::uint64_t seed = 0;
};

// Random (codebook, prior row, concave or indefinite quadratic goal) instances
// checked against both bounds. Instance i depends only on (seed, i), so the
// normalized and unnormalized runs of the same seed differ only in the
// codebook row norms.
BoundReport verify_bound(const BoundConfig& config);

}  // namespace mscot::guidance
