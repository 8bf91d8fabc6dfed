#pragma once

#include <vector>

#include "mscot/bench/checkpoint.hpp"
#include "mscot/bench/config.hpp"
#include "mscot/bench/pipeline.hpp"
#include "mscot/corpus/corpus.hpp"

namespace mscot::bench {

// End-to-end desk stages shared by the CLI and the acceptance run. Trained
// parameters are rounded to float32 so that a saved checkpoint reloads to the
// exact in-memory model.
corpus::Corpus make_corpus(const DeskConfig& config);

VqvaeCheckpoint train_vqvae_stage(const DeskConfig& config, const corpus::Corpus& data,
                                  std::vector<vqvae::EpochLoss>* log = nullptr);

struct TokenizedSplit {
  std::vector<quantizer::TokenHierarchy> tokens;
  std::vector<std::size_t> labels;
};
TokenizedSplit tokenize_split(const vqvae::VqvaeModel& vq, const corpus::Corpus& data,
                              const std::vector<std::size_t>& split);

PriorCheckpoint train_prior_stage(const DeskConfig& config, const corpus::Corpus& data, const vqvae::VqvaeModel& vq,
                                  std::vector<prior::PriorEpoch>* log = nullptr);

RefinerCheckpoint train_refiner_stage(const DeskConfig& config, const corpus::Corpus& data,
                                      const vqvae::VqvaeModel& vq, std::vector<refiner::RefinerEpoch>* log = nullptr);

// Sampling, guidance and refinement settings of `config`.
GenerationConfig generation_config(const DeskConfig& config);

// Mean cumulative validation curve and the share of non-increasing steps,
// pooled over (sequence, scale step).
struct CurveSummary {
  double baseline = 0;
  std::vector<double> mean_cumulative;
  std::size_t steps = 0, non_increasing = 0;
};
CurveSummary validation_curve(const vqvae::VqvaeModel& vq, const corpus::Corpus& data);

}  // namespace mscot::bench
