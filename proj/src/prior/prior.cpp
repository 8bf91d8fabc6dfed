#include "mscot/prior/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "mscot/common/error.hpp"
#include "mscot/ndiff/optim.hpp"

namespace mscot::prior {

using ndiff::Binding;
using ndiff::Tape;
using ndiff::Tensor;
using ndiff::Var;
using quantizer::ScaleSchedule;
using quantizer::TokenHierarchy;

namespace {

std::string block_name(std::size_t i) { return "prior.blk" + std::to_string(i); }

Tensor random_table(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

}  // namespace

PriorModel init_prior(const PriorConfig& config, std::uint64_t seed) {
  if (config.vocab < 2) throw ConfigError("prior vocabulary needs at least 2 tokens");
  if (config.scales == 0) throw ConfigError("prior needs at least one scale");
  PriorModel m{config, {}};
  Rng rng(seed, "prior.init");
  const std::size_t w = config.block.width;
  m.params.add("prior.tok", random_table(config.vocab, w, 0.3, rng));
  m.params.add("prior.cond", random_table(config.num_classes + 1, w, 0.3, rng));
  m.params.add("prior.scale", random_table(config.scales, w, 0.3, rng));
  for (std::size_t i = 0; i < config.blocks; ++i)
    ndiff::init_transformer_block(m.params, block_name(i), config.block, rng);
  ndiff::init_layer_norm(m.params, "prior.ln_f", w);
  ndiff::init_linear(m.params, "prior.head", w, config.vocab, rng, 0.1);
  return m;
}

Var prior_forward(Binding& b, const PriorModel& model, const TokenHierarchy& tokens,
                  std::size_t label, const ScaleSchedule& schedule, std::size_t upto) {
  const PriorConfig& cfg = model.config;
  if (schedule.scales() != cfg.scales)
    throw ConfigError("schedule has " + std::to_string(schedule.scales()) + " scales, prior expects " +
                      std::to_string(cfg.scales));
  if (upto >= schedule.scales()) throw LengthError("scale index beyond the schedule");
  if (tokens.size() < upto) throw LengthError("token prefix is shorter than the requested scale");
  if (label > cfg.num_classes) throw ConfigError("condition label " + std::to_string(label) + " out of range");
  TokenHierarchy prefix;
  prefix.scales.assign(tokens.scales.begin(), tokens.scales.begin() + static_cast<std::ptrdiff_t>(upto));
  prefix.validate(schedule, cfg.vocab, true);

  const std::size_t w = cfg.block.width;
  std::vector<Var> blocks;
  std::vector<std::size_t> lengths, scale_ids;
  std::vector<double> pos;
  for (std::size_t j = 0; j <= upto; ++j) {
    const std::size_t len = schedule.length(j);
    if (j == 0) {
      blocks.push_back(ndiff::gather_rows(b("prior.cond"), std::vector<std::size_t>(len, label)));
    } else {
      blocks.push_back(ndiff::interp_resize(ndiff::gather_rows(b("prior.tok"), prefix.scales[j - 1]), len));
    }
    lengths.push_back(len);
    for (std::size_t l = 0; l < len; ++l) {
      scale_ids.push_back(j);
      const auto f = ndiff::relative_position_features((l + 0.5) / static_cast<double>(len), w);
      pos.insert(pos.end(), f.begin(), f.end());
    }
  }
  const std::size_t n = scale_ids.size();
  Var x = ndiff::concat_rows(blocks);
  x = ndiff::add(x, ndiff::gather_rows(b("prior.scale"), scale_ids));
  x = ndiff::add(x, b.tape().constant(Tensor({n, w}, std::move(pos))));
  const auto mask = ndiff::AttentionMask::block_causal(lengths);
  for (std::size_t i = 0; i < cfg.blocks; ++i) x = ndiff::transformer_block(b, block_name(i), x, mask, cfg.block);
  return ndiff::linear(b, "prior.head", ndiff::layer_norm(b, "prior.ln_f", x));
}

Tensor prior_logits(const PriorModel& model, const TokenHierarchy& prefix, std::size_t label,
                    const ScaleSchedule& schedule, std::size_t k) {
  Tape tape;
  Binding b(tape, model.params, false);
  const Tensor all = prior_forward(b, model, prefix, label, schedule, k).value();
  const std::size_t offset = all.rows() - schedule.length(k);
  Tensor out({schedule.length(k), all.cols()});
  std::copy(all.data().begin() + static_cast<std::ptrdiff_t>(offset * all.cols()), all.data().end(),
            out.data().begin());
  return out;
}

Tensor cfg_logits(const Tensor& cond, const Tensor& uncond, double w) {
  if (cond.shape() != uncond.shape()) throw ShapeError("cfg logits must share a shape");
  Tensor out(cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 + w) * cond[i] - w * uncond[i];
  return out;
}

std::vector<PriorEpoch> train_prior(PriorModel& model, const std::vector<TokenHierarchy>& tokens,
                                    const std::vector<std::size_t>& labels,
                                    const ScaleSchedule& schedule, const PriorTrainConfig& config) {
  if (tokens.empty()) throw ConfigError("prior training set is empty");
  if (tokens.size() != labels.size()) throw ConfigError("tokens and labels differ in count");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  for (const auto& t : tokens) t.validate(schedule, model.config.vocab);
  for (std::size_t l : labels)
    if (l >= model.config.num_classes) throw ConfigError("training label out of range");

  const std::size_t K = schedule.scales();
  Rng rng(config.seed, "prior.train");
  ndiff::Adam opt(ndiff::AdamConfig{.lr = config.lr, .clip_norm = config.clip_norm});
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PriorEpoch> log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    if (config.cosine_decay)
      opt.set_lr(0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * epoch / config.epochs)));
    PriorEpoch row{.epoch = epoch + 1};
    std::size_t correct = 0, total = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ndiff::GradMap grads;
      for (std::size_t i = start; i < end; ++i) {
        const TokenHierarchy& h = tokens[order[i]];
        const std::size_t label = rng.bernoulli(config.null_label_prob) ? model.null_label() : labels[order[i]];
        Tape tape;
        Binding b(tape, model.params, true);
        Var logits = prior_forward(b, model, h, label, schedule, K - 1);
        std::vector<std::size_t> flat;
        for (const auto& s : h.scales) flat.insert(flat.end(), s.begin(), s.end());
        Var loss = ndiff::cross_entropy_sum(logits, flat);
        row.loss += loss.value().item();
        const Tensor& lv = logits.value();
        for (std::size_t r = 0; r < flat.size(); ++r) {
          const auto rowv = lv.row(r);
          correct += static_cast<std::size_t>(std::max_element(rowv.begin(), rowv.end()) - rowv.begin()) == flat[r];
        }
        total += flat.size();
        ndiff::accumulate(grads, b.gradients(tape.backward(loss)), 1.0 / static_cast<double>(end - start));
      }
      if (config.lr != 0.0) opt.step(model.params, grads);
    }
    row.loss /= static_cast<double>(tokens.size());
    row.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    spdlog::debug("prior epoch {}: loss {:.4f} acc {:.4f}", row.epoch, row.loss, row.accuracy);
    log.push_back(row);
  }
  return log;
}

double sequence_loss(const PriorModel& model, const TokenHierarchy& tokens, std::size_t label,
                     const ScaleSchedule& schedule) {
  tokens.validate(schedule, model.config.vocab);
  Tape tape;
  Binding b(tape, model.params, false);
  Var logits = prior_forward(b, model, tokens, label, schedule, schedule.scales() - 1);
  std::vector<std::size_t> flat;
  for (const auto& s : tokens.scales) flat.insert(flat.end(), s.begin(), s.end());
  return ndiff::cross_entropy_sum(logits, flat).value().item();
}

double teacher_forced_accuracy(const PriorModel& model, const std::vector<TokenHierarchy>& tokens,
                               const std::vector<std::size_t>& labels, const ScaleSchedule& schedule) {
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Tape tape;
    Binding b(tape, model.params, false);
    const Tensor lv = prior_forward(b, model, tokens[i], labels[i], schedule, schedule.scales() - 1).value();
    std::size_t r = 0;
    for (const auto& s : tokens[i].scales)
      for (std::size_t z : s) {
        const auto row = lv.row(r++);
        correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == z;
        ++total;
      }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

Tensor probabilities(const Tensor& logits, double temperature, std::size_t top_k) {
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  Tensor scaled = logits;
  for (double& v : scaled.data()) v /= temperature;
  if (top_k > 0 && top_k < scaled.cols()) {
    for (std::size_t r = 0; r < scaled.rows(); ++r) {
      auto row = scaled.row(r);
      std::vector<double> sorted(row.begin(), row.end());
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(top_k - 1), sorted.end(),
                       std::greater<>());
      const double cut = sorted[top_k - 1];
      for (double& v : row)
        if (v < cut) v = -INFINITY;
    }
  }
  // Softmax with max subtraction; -inf entries become exact zeros.
  Tensor out(scaled.shape());
  for (std::size_t r = 0; r < scaled.rows(); ++r) {
    const auto row = scaled.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) z += out.at(r, j) = std::exp(row[j] - m);
    for (std::size_t j = 0; j < row.size(); ++j) out.at(r, j) /= z;
  }
  return out;
}

Tensor guided_logits(const PriorModel& model, const TokenHierarchy& prefix, std::size_t label,
                     const ScaleSchedule& schedule, std::size_t k, double cfg_weight) {
  Tensor cond = prior_logits(model, prefix, label, schedule, k);
  if (cfg_weight == 0.0) return cond;
  return cfg_logits(cond, prior_logits(model, prefix, model.null_label(), schedule, k), cfg_weight);
}

std::vector<std::size_t> sample_rows(const Tensor& probs, Rng& rng) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = row.size() - 1;
    for (std::size_t j = 0; j < row.size(); ++j) {
      acc += row[j];
      if (u < acc) {
        pick = j;
        break;
      }
    }
    // Never land on a zero-probability tail entry through rounding.
    while (row[pick] == 0.0 && pick > 0) --pick;
    out[r] = pick;
  }
  return out;
}

void check_distribution(const Tensor& probs) {
  ndiff::require_matrix(probs, "distribution");
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double s = 0.0;
    for (double v : probs.row(r)) {
      if (!(v >= 0.0)) throw ContractViolation("distribution row " + std::to_string(r) + " has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw ContractViolation("distribution row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

TokenHierarchy sample_hierarchy(const PriorModel& model, std::size_t label, const ScaleSchedule& schedule,
                                const SamplerConfig& config, const GuidanceHook& hook) {
  Rng rng(config.seed, "prior.sample");
  TokenHierarchy h;
  for (std::size_t k = 0; k < schedule.scales(); ++k) {
    Tensor probs = probabilities(guided_logits(model, h, label, schedule, k, config.cfg_weight),
                                 config.temperature, config.top_k);
    if (hook) {
      probs = hook(k, h, probs);
      if (probs.rows() != schedule.length(k) || probs.cols() != model.config.vocab)
        throw ContractViolation("guidance hook changed the distribution shape");
      check_distribution(probs);
    }
    h.scales.push_back(sample_rows(probs, rng));
  }
  return h;
}

}  // namespace mscot::prior
