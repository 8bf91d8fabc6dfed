#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscot/bench/config.hpp"
#include "mscot/bench/metrics.hpp"
#include "mscot/corpus/corpus.hpp"

namespace mscot::bench {

struct Models {
  const vqvae::VqvaeModel* vq = nullptr;
  const prior::PriorModel* prior = nullptr;
  const refiner::RefinerModel* refiner = nullptr;  // optional
};

struct GenerationConfig {
  std::size_t label = 0;
  std::size_t target_len = 0;  // final latent length; 0 keeps the base schedule
  prior::SamplerConfig sampling;
  guidance::StepConfig guidance;  // mode off samples the prior unchanged
  bool refine = false;            // test-time refinement after the scale loop
  refiner::RefinementConfig refinement;
};

struct Generation {
  quantizer::ScaleSchedule schedule;
  quantizer::TokenHierarchy tokens;
  std::vector<ndiff::Tensor> embeddings, residuals;
  ndiff::Tensor motion;  // normalized units, 4 * final length frames
  guidance::DecoderPasses passes;
  std::vector<guidance::DecoderPasses> scale_passes;
  std::size_t skipped_scales = 0;
  std::optional<refiner::RefinementResult> refinement;
  double guidance_seconds = 0, refinement_seconds = 0;
};

// Called once per scale with the prior distribution, the guidance objective
// (null when guidance is off) and the distribution actually sampled.
using ScaleObserver = std::function<void(std::size_t k, const ndiff::Tensor& prior_probs,
                                         const guidance::ScaleObjective* objective,
                                         const ndiff::Tensor& sampled_probs)>;

// Scale loop: prior distribution (with CFG), guidance against `goal`, sampling,
// refiner residuals; then optional test-time refinement of all residuals.
// `goal` may be null only when guidance is off and refinement disabled.
Generation generate(const Models& models, const GenerationConfig& config, const goals::GoalPtr& goal = nullptr,
                    const goals::ControlMask* mask = nullptr, const ScaleObserver& observer = nullptr);

// D(sum of refined contributions of scales 1..k) for k = 1..K.
std::vector<ndiff::Tensor> intermediate_motions(const vqvae::VqvaeModel& vq, const Generation& g);

// Joint-control instances: instance i targets validation motion i (cycling),
// resampled to `frames`, with evenly spaced keyframes on the control channels.
struct ControlTask {
  std::vector<ndiff::Tensor> references;
  std::vector<std::size_t> labels;
  std::vector<goals::ControlMask> masks;
  std::vector<goals::GoalPtr> goals;
};
ControlTask make_control_task(const corpus::Corpus& corpus, const ControlSection& control, std::size_t frames);

struct ControlRun {
  ControlReport report;
  std::vector<Generation> generations;
};
// Seed of instance i is derived from (base seed, i); the same seeds are used
// for every mode so runs are paired.
ControlRun run_control(const Models& models, const ControlTask& task, const GenerationConfig& base,
                       double threshold);

// Per-scale mean KL(exact || first-order) per position and mean prior-expected
// squared code distance to the expansion point, over guided control instances.
struct KlDiagnostics {
  std::size_t instances = 0;
  std::vector<double> kl, code_distance;
  nlohmann::json to_json() const;
};
KlDiagnostics kl_diagnostics(const Models& models, const ControlTask& task, const GenerationConfig& base,
                             std::size_t instances);

std::uint64_t instance_seed(std::uint64_t seed, std::size_t i);

// Run manifest: command, config echo and hash, seed, timings, outputs.
nlohmann::json run_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                            const nlohmann::json& timings, const std::vector<std::string>& outputs);

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace mscot::bench
