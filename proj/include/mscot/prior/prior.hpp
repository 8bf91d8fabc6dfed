#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mscot/ndiff/nn.hpp"
#include "mscot/quantizer/multiscale.hpp"

namespace mscot::prior {

// Scale-autoregressive transformer over token hierarchies. Scales are indexed
// from 0 in this API.
struct PriorConfig {
  std::size_t vocab = 64;
  std::size_t scales = 5;
  std::size_t num_classes = 3;
  ndiff::TransformerShape block{64, 4, 4};
  std::size_t blocks = 2;
};

struct PriorModel {
  PriorConfig config;
  ndiff::ParamStore params;
  // Label reserved for the unconditional branch of classifier-free guidance.
  std::size_t null_label() const { return config.num_classes; }
};

PriorModel init_prior(const PriorConfig& config, std::uint64_t seed);

// Logits (sum of L'_0..L'_upto rows, V columns) for scales 0..upto given the
// tokens of scales 0..upto-1. Block 0 is the condition embedding; block j is the
// token embedding of scale j-1 interpolated to L'_j. Attention is block-causal.
ndiff::Var prior_forward(ndiff::Binding& b, const PriorModel& model,
                         const quantizer::TokenHierarchy& tokens, std::size_t label,
                         const quantizer::ScaleSchedule& schedule, std::size_t upto);

// L'_k x V logits for scale k; `prefix` must hold at least scales 0..k-1.
ndiff::Tensor prior_logits(const PriorModel& model, const quantizer::TokenHierarchy& prefix,
                           std::size_t label, const quantizer::ScaleSchedule& schedule,
                           std::size_t k);

// (1 + w) cond - w uncond.
ndiff::Tensor cfg_logits(const ndiff::Tensor& cond, const ndiff::Tensor& uncond, double w);

struct PriorTrainConfig {
  double lr = 2e-4;
  double clip_norm = 0.0;
  bool cosine_decay = false;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  double null_label_prob = 0.1;
  std::uint64_t seed = 0;
};

struct PriorEpoch {
  std::size_t epoch = 0;
  double loss = 0;      // summed cross-entropy per sequence
  double accuracy = 0;  // teacher-forced argmax accuracy during the epoch
};

std::vector<PriorEpoch> train_prior(PriorModel& model,
                                    const std::vector<quantizer::TokenHierarchy>& tokens,
                                    const std::vector<std::size_t>& labels,
                                    const quantizer::ScaleSchedule& schedule,
                                    const PriorTrainConfig& config);

// Summed cross-entropy of one hierarchy under teacher forcing.
double sequence_loss(const PriorModel& model, const quantizer::TokenHierarchy& tokens,
                     std::size_t label, const quantizer::ScaleSchedule& schedule);
double teacher_forced_accuracy(const PriorModel& model,
                               const std::vector<quantizer::TokenHierarchy>& tokens,
                               const std::vector<std::size_t>& labels,
                               const quantizer::ScaleSchedule& schedule);

struct SamplerConfig {
  double cfg_weight = 5.0;
  double temperature = 1.0;
  std::size_t top_k = 0;  // 0 keeps the full vocabulary
  std::uint64_t seed = 0;
};

// Row-wise categorical distributions from logits with temperature and top-k.
ndiff::Tensor probabilities(const ndiff::Tensor& logits, double temperature, std::size_t top_k);
// Guided logits (CFG applied when cfg_weight != 0).
ndiff::Tensor guided_logits(const PriorModel& model, const quantizer::TokenHierarchy& prefix,
                            std::size_t label, const quantizer::ScaleSchedule& schedule,
                            std::size_t k, double cfg_weight);

// Inverse-CDF draw per row.
std::vector<std::size_t> sample_rows(const ndiff::Tensor& probs, Rng& rng);

// ContractViolation unless each row is non-negative and sums to 1 within 1e-9.
void check_distribution(const ndiff::Tensor& probs);

// Receives the scale index, the prefix so far and the prior distribution of
// the scale; returns the distribution to sample from.
using GuidanceHook = std::function<ndiff::Tensor(std::size_t k, const quantizer::TokenHierarchy& prefix,
                                                 const ndiff::Tensor& probs)>;

quantizer::TokenHierarchy sample_hierarchy(const PriorModel& model, std::size_t label,
                                           const quantizer::ScaleSchedule& schedule,
                                           const SamplerConfig& config,
                                           const GuidanceHook& hook = nullptr);

}  // namespace mscot::prior
