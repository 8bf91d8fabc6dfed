#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "mscot/goals/goals.hpp"
#include "mscot/ndiff/nn.hpp"
#include "mscot/vqvae/vqvae.hpp"

namespace mscot::refiner {

// Self-attention network over one scale's code embeddings predicting a
// continuous residual of the same shape.
struct RefinerConfig {
  std::size_t code_dim = 16;
  std::size_t scales = 5;
  ndiff::TransformerShape block{32, 4, 2};
  std::size_t blocks = 2;
  bool positional = true;  // add fixed sinusoidal features of l / L'
};

struct RefinerModel {
  RefinerConfig config;
  ndiff::ParamStore params;
};

// The output projection starts at zero, so a fresh refiner is the identity.
RefinerModel init_refiner(const RefinerConfig& config, std::uint64_t seed);

ndiff::Var refiner_residual(ndiff::Binding& b, const RefinerModel& model, std::size_t k,
                            const ndiff::Var& embeddings);
ndiff::Tensor refine_tokens(const RefinerModel& model, std::size_t k, const ndiff::Tensor& embeddings);

// Code embeddings of every scale of `tokens` plus the refiner residuals
// (nullptr refiner: unrefined).
std::vector<ndiff::Tensor> scale_embeddings(const vqvae::VqvaeModel& vq, const quantizer::TokenHierarchy& tokens);
std::vector<ndiff::Tensor> predict_residuals(const RefinerModel* model, const std::vector<ndiff::Tensor>& embeddings);

// D(sum_k contribution_k(e_k + residual_k)) on the tape, scales 1..residuals.size().
ndiff::Var decode_refined(ndiff::Binding& vq_binding, const vqvae::VqvaeModel& vq,
                          const quantizer::ScaleSchedule& schedule, const std::vector<ndiff::Tensor>& embeddings,
                          const std::vector<ndiff::Var>& residuals);
ndiff::Tensor decode_refined(const vqvae::VqvaeModel& vq, const quantizer::ScaleSchedule& schedule,
                             const std::vector<ndiff::Tensor>& embeddings,
                             const std::vector<ndiff::Tensor>& residuals);

struct RefinerTrainConfig {
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
};

struct RefinerEpoch {
  std::size_t epoch = 0;
  double loss = 0;      // mean reconstruction MSE with residuals
  double baseline = 0;  // same without residuals
};

// Minimises the reconstruction error of decode(e + refiner(e)) over full
// hierarchies. The tokenizer is frozen; FreezeViolation if its parameters
// change.
std::vector<RefinerEpoch> train_refiner(RefinerModel& model, const vqvae::VqvaeModel& vq,
                                        const std::vector<ndiff::Tensor>& corpus, const RefinerTrainConfig& config);

// Mean reconstruction MSE over `corpus` with and without the refiner.
RefinerEpoch evaluate_refiner(const RefinerModel& model, const vqvae::VqvaeModel& vq,
                              const std::vector<ndiff::Tensor>& corpus);

enum class Optimizer { kGradientAscent, kAdam };

struct RefinementConfig {
  std::size_t iterations = 200;
  double step = 0.01;
  Optimizer optimizer = Optimizer::kGradientAscent;
  // Stop once one iteration improves the goal by less than this (0: never).
  double tolerance = 0.0;
};

struct TraceRow {
  std::size_t iteration = 0;
  double goal = 0;
  double keyframe_error = 0;  // mean L2 over masked keyframes; 0 without a mask
};

struct RefinementResult {
  std::vector<ndiff::Tensor> residuals;  // best-so-far by goal value
  ndiff::Tensor motion;
  double initial_goal = 0, final_goal = 0;
  std::size_t iterations_run = 0, best_iteration = 0;
  bool stopped_nonfinite = false;
  std::vector<TraceRow> trace;  // one row per evaluated iterate, iteration 0 first
};

// Motion as a differentiable function of the residuals.
using ResidualDecoder = std::function<ndiff::Var(ndiff::Tape&, const std::vector<ndiff::Var>& residuals)>;

ResidualDecoder vqvae_residual_decoder(const vqvae::VqvaeModel& vq, const quantizer::ScaleSchedule& schedule,
                                       std::vector<ndiff::Tensor> embeddings);

// Gradient ascent on log p(G | decode(residuals)).
RefinementResult test_time_refine(const ResidualDecoder& decoder, std::vector<ndiff::Tensor> residuals,
                                  const goals::Goal& goal, const RefinementConfig& config,
                                  const goals::ControlMask* mask = nullptr);

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

}  // namespace mscot::refiner
