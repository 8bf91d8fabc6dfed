#include "mscot/bench/stages.hpp"

#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"

namespace mscot::bench {

corpus::Corpus make_corpus(const DeskConfig& config) {
  return corpus::generate_corpus(corpus::default_specs(config.corpus.length), config.corpus.per_family, config.seed,
                                 config.corpus.validation_fraction);
}

VqvaeCheckpoint train_vqvae_stage(const DeskConfig& config, const corpus::Corpus& data,
                                  std::vector<vqvae::EpochLoss>* log) {
  if (data.sequences.front().cols() != config.vqvae.channels)
    throw ConfigError("corpus channel count does not match vqvae.channels");
  VqvaeCheckpoint out{vqvae::init_vqvae(config.vqvae, config.seed), data.stats, config.seed};
  auto rows = vqvae::train_vqvae(out.model, data.normalized(data.train), config.vqvae_train);
  io::round_to_float(out.model.params);
  if (log) *log = std::move(rows);
  return out;
}

TokenizedSplit tokenize_split(const vqvae::VqvaeModel& vq, const corpus::Corpus& data,
                              const std::vector<std::size_t>& split) {
  TokenizedSplit out;
  for (std::size_t i : split) {
    out.tokens.push_back(vqvae::tokenize(vq, corpus::normalize(data.sequences[i], data.stats)));
    out.labels.push_back(data.labels[i]);
  }
  return out;
}

PriorCheckpoint train_prior_stage(const DeskConfig& config, const corpus::Corpus& data, const vqvae::VqvaeModel& vq,
                                  std::vector<prior::PriorEpoch>* log) {
  prior::PriorConfig pc = config.prior;
  pc.vocab = vq.config.quant.codebook_size;
  pc.scales = vq.config.quant.base_schedule.size();
  pc.num_classes = data.num_classes();
  PriorCheckpoint out{prior::init_prior(pc, config.seed), config.seed};
  const auto split = tokenize_split(vq, data, data.train);
  const auto schedule = vq.schedule_for(data.sequences.front().rows() / vqvae::kDownsample);
  auto rows = prior::train_prior(out.model, split.tokens, split.labels, schedule, config.prior_train);
  io::round_to_float(out.model.params);
  if (log) *log = std::move(rows);
  return out;
}

RefinerCheckpoint train_refiner_stage(const DeskConfig& config, const corpus::Corpus& data,
                                      const vqvae::VqvaeModel& vq, std::vector<refiner::RefinerEpoch>* log) {
  refiner::RefinerConfig rc = config.refiner;
  rc.code_dim = vq.config.quant.code_dim;
  rc.scales = vq.config.quant.base_schedule.size();
  RefinerCheckpoint out{refiner::init_refiner(rc, config.seed), config.seed};
  auto rows = refiner::train_refiner(out.model, vq, data.normalized(data.train), config.refiner_train);
  io::round_to_float(out.model.params);
  if (log) *log = std::move(rows);
  return out;
}

GenerationConfig generation_config(const DeskConfig& config) {
  GenerationConfig g;
  g.target_len = config.target_len;
  g.sampling = config.sampling;
  g.guidance = config.guidance;
  g.refine = config.refinement.iterations > 0;
  g.refinement = config.refinement;
  return g;
}

CurveSummary validation_curve(const vqvae::VqvaeModel& vq, const corpus::Corpus& data) {
  CurveSummary s;
  const auto motions = data.normalized(data.validation);
  if (motions.empty()) throw ConfigError("validation split is empty");
  s.mean_cumulative.assign(vq.config.quant.base_schedule.size(), 0.0);
  for (const auto& x : motions) {
    const auto curve = vqvae::reconstruction_curve(vq, x);
    s.baseline += curve.baseline / static_cast<double>(motions.size());
    for (std::size_t k = 0; k < curve.cumulative.size(); ++k) {
      s.mean_cumulative[k] += curve.cumulative[k] / static_cast<double>(motions.size());
      if (k > 0) {
        ++s.steps;
        s.non_increasing += curve.cumulative[k] <= curve.cumulative[k - 1];
      }
    }
  }
  return s;
}

}  // namespace mscot::bench
