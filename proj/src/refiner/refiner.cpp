#include "mscot/refiner/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"
#include "mscot/ndiff/optim.hpp"

namespace mscot::refiner {

using ndiff::Binding;
using ndiff::Tape;
using ndiff::Tensor;
using ndiff::Var;
using quantizer::ScaleSchedule;

namespace {

std::string block_name(std::size_t i) { return "ref.blk" + std::to_string(i); }

}  // namespace

RefinerModel init_refiner(const RefinerConfig& config, std::uint64_t seed) {
  if (config.code_dim == 0 || config.scales == 0) throw ConfigError("refiner needs d >= 1 and K >= 1");
  RefinerModel m{config, {}};
  Rng rng(seed, "refiner.init");
  const std::size_t w = config.block.width;
  ndiff::init_linear(m.params, "ref.in", config.code_dim, w, rng);
  Tensor scale({config.scales, w});
  for (double& v : scale.data()) v = rng.normal(0.0, 0.3);
  m.params.add("ref.scale", std::move(scale));
  for (std::size_t i = 0; i < config.blocks; ++i) ndiff::init_transformer_block(m.params, block_name(i), config.block, rng);
  ndiff::init_layer_norm(m.params, "ref.ln_f", w);
  ndiff::init_linear(m.params, "ref.out", w, config.code_dim, rng);
  m.params["ref.out.weight"].fill(0.0);
  m.params["ref.out.bias"].fill(0.0);
  return m;
}

Var refiner_residual(Binding& b, const RefinerModel& model, std::size_t k, const Var& embeddings) {
  const RefinerConfig& cfg = model.config;
  if (k >= cfg.scales) throw LengthError("scale index beyond the refiner's scale count");
  if (embeddings.shape().size() != 2 || embeddings.shape()[1] != cfg.code_dim)
    throw ShapeError("refiner expects L x " + std::to_string(cfg.code_dim) + " embeddings, got " +
                     ndiff::shape_string(embeddings.shape()));
  const std::size_t L = embeddings.shape()[0], w = cfg.block.width;
  Var x = ndiff::linear(b, "ref.in", embeddings);
  x = ndiff::add(x, ndiff::gather_rows(b("ref.scale"), std::vector<std::size_t>(L, k)));
  if (cfg.positional) {
    std::vector<double> pos;
    for (std::size_t l = 0; l < L; ++l) {
      const auto f = ndiff::relative_position_features((l + 0.5) / static_cast<double>(L), w);
      pos.insert(pos.end(), f.begin(), f.end());
    }
    x = ndiff::add(x, b.tape().constant(Tensor({L, w}, std::move(pos))));
  }
  const auto mask = ndiff::AttentionMask::full(L);
  for (std::size_t i = 0; i < cfg.blocks; ++i) x = ndiff::transformer_block(b, block_name(i), x, mask, cfg.block);
  return ndiff::linear(b, "ref.out", ndiff::layer_norm(b, "ref.ln_f", x));
}

Tensor refine_tokens(const RefinerModel& model, std::size_t k, const Tensor& embeddings) {
  Tape tape;
  Binding b(tape, model.params, false);
  return refiner_residual(b, model, k, tape.constant(embeddings)).value();
}

std::vector<Tensor> scale_embeddings(const vqvae::VqvaeModel& vq, const quantizer::TokenHierarchy& tokens) {
  const Tensor& book = vq.params[quantizer::kCodebookName];
  const std::size_t d = book.cols();
  std::vector<Tensor> out;
  for (const auto& scale : tokens.scales) {
    Tensor e({scale.size(), d});
    for (std::size_t l = 0; l < scale.size(); ++l) {
      if (scale[l] >= book.rows()) throw ConfigError("token index outside the codebook");
      std::copy(book.row(scale[l]).begin(), book.row(scale[l]).end(), e.row(l).begin());
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Tensor> predict_residuals(const RefinerModel* model, const std::vector<Tensor>& embeddings) {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < embeddings.size(); ++k)
    out.push_back(model ? refine_tokens(*model, k, embeddings[k]) : Tensor(embeddings[k].shape()));
  return out;
}

Var decode_refined(Binding& b, const vqvae::VqvaeModel& vq, const ScaleSchedule& schedule,
                   const std::vector<Tensor>& embeddings, const std::vector<Var>& residuals) {
  if (residuals.size() > embeddings.size() || residuals.size() > schedule.scales())
    throw LengthError("more residual scales than embeddings");
  std::vector<Var> refined;
  for (std::size_t k = 0; k < residuals.size(); ++k)
    refined.push_back(ndiff::add(b.tape().constant(embeddings[k]), residuals[k]));
  return vqvae::decode(b, vq.config, quantizer::decode_features(b, refined, schedule, vq.config.quant.code_dim));
}

Tensor decode_refined(const vqvae::VqvaeModel& vq, const ScaleSchedule& schedule, const std::vector<Tensor>& embeddings,
                      const std::vector<Tensor>& residuals) {
  Tape tape;
  Binding b(tape, vq.params, false);
  std::vector<Var> res;
  for (const auto& r : residuals) res.push_back(tape.constant(r));
  return decode_refined(b, vq, schedule, embeddings, res).value();
}

namespace {

struct Example {
  const Tensor* motion;
  ScaleSchedule schedule;
  std::vector<Tensor> embeddings;
};

std::vector<Example> prepare(const vqvae::VqvaeModel& vq, const std::vector<Tensor>& corpus) {
  std::vector<Example> out;
  for (const auto& x : corpus) {
    const auto tokens = vqvae::tokenize(vq, x);
    out.push_back({&x, vq.schedule_for(x.rows() / vqvae::kDownsample), scale_embeddings(vq, tokens)});
  }
  return out;
}

// Reconstruction MSE with the refiner on the tape; gradients flow to `b_ref`.
Var refined_loss(Binding& b_ref, Binding& b_vq, const RefinerModel& model, const vqvae::VqvaeModel& vq,
                 const Example& ex) {
  std::vector<Var> residuals;
  for (std::size_t k = 0; k < ex.embeddings.size(); ++k)
    residuals.push_back(refiner_residual(b_ref, model, k, b_ref.tape().constant(ex.embeddings[k])));
  return ndiff::mse(decode_refined(b_vq, vq, ex.schedule, ex.embeddings, residuals),
                    b_ref.tape().constant(*ex.motion));
}

RefinerEpoch evaluate_prepared(const RefinerModel& model, const vqvae::VqvaeModel& vq, const std::vector<Example>& data) {
  RefinerEpoch row;
  for (const auto& ex : data) {
    Tape tape;
    Binding b_ref(tape, model.params, false), b_vq(tape, vq.params, false);
    row.loss += refined_loss(b_ref, b_vq, model, vq, ex).value().item() / static_cast<double>(data.size());
    std::vector<Tensor> zeros;
    for (const auto& e : ex.embeddings) zeros.emplace_back(e.shape());
    row.baseline += ndiff::mean_squared_error(decode_refined(vq, ex.schedule, ex.embeddings, zeros), *ex.motion) /
                    static_cast<double>(data.size());
  }
  return row;
}

}  // namespace

RefinerEpoch evaluate_refiner(const RefinerModel& model, const vqvae::VqvaeModel& vq, const std::vector<Tensor>& corpus) {
  if (corpus.empty()) throw ConfigError("evaluation corpus is empty");
  return evaluate_prepared(model, vq, prepare(vq, corpus));
}

std::vector<RefinerEpoch> train_refiner(RefinerModel& model, const vqvae::VqvaeModel& vq,
                                        const std::vector<Tensor>& corpus, const RefinerTrainConfig& config) {
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (model.config.code_dim != vq.config.quant.code_dim)
    throw ConfigError("refiner code dimension does not match the tokenizer");
  if (model.config.scales < vq.config.quant.base_schedule.size())
    throw ConfigError("refiner has fewer scales than the tokenizer");
  const ndiff::ParamStore frozen = vq.params;
  const auto data = prepare(vq, corpus);

  Rng rng(config.seed, "refiner.train");
  ndiff::Adam opt(ndiff::AdamConfig{.lr = config.lr, .clip_norm = config.clip_norm});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<RefinerEpoch> log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ndiff::GradMap grads;
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        Binding b_ref(tape, model.params, true), b_vq(tape, vq.params, false);
        const Var loss = refined_loss(b_ref, b_vq, model, vq, data[order[i]]);
        if (!std::isfinite(loss.value().item())) throw NumericError("refiner loss diverged; lower the learning rate");
        total += loss.value().item();
        // Only refiner parameters are bound as trainable; tokenizer adjoints never reach the optimiser.
        ndiff::accumulate(grads, b_ref.gradients(tape.backward(loss)), 1.0 / static_cast<double>(end - start));
      }
      if (config.lr != 0.0) opt.step(model.params, grads);
    }
    RefinerEpoch row = evaluate_prepared(model, vq, data);
    row.epoch = epoch + 1;
    spdlog::debug("refiner epoch {}: train {:.5f} refined {:.5f} plain {:.5f}", row.epoch,
                  total / static_cast<double>(data.size()), row.loss, row.baseline);
    log.push_back(row);
  }
  if (!(vq.params == frozen)) throw FreezeViolation("tokenizer parameters changed during refiner training");
  return log;
}

ResidualDecoder vqvae_residual_decoder(const vqvae::VqvaeModel& vq, const ScaleSchedule& schedule,
                                       std::vector<Tensor> embeddings) {
  return [&vq, schedule, embeddings = std::move(embeddings)](Tape& tape, const std::vector<Var>& residuals) {
    Binding b(tape, vq.params, false);
    return decode_refined(b, vq, schedule, embeddings, residuals);
  };
}

namespace {

double mean_keyframe_error(const Tensor& motion, const goals::ControlMask* mask) {
  if (!mask) return 0.0;
  const auto errs = goals::keyframe_errors(motion, *mask);
  if (errs.empty()) return 0.0;
  return std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
}

std::string residual_name(std::size_t k) { return "res" + std::to_string(k); }

}  // namespace

RefinementResult test_time_refine(const ResidualDecoder& decoder, std::vector<Tensor> residuals,
                                  const goals::Goal& goal, const RefinementConfig& config,
                                  const goals::ControlMask* mask) {
  if (!(config.step > 0)) throw ConfigError("refinement step size must be positive");
  ndiff::ParamStore state;
  for (std::size_t k = 0; k < residuals.size(); ++k) state.add(residual_name(k), std::move(residuals[k]));
  ndiff::Adam adam(ndiff::AdamConfig{.lr = config.step});

  RefinementResult out;
  double best = -std::numeric_limits<double>::infinity();
  ndiff::ParamStore best_state = state;
  double previous = 0;
  for (std::size_t it = 0;; ++it) {
    Tape tape;
    Binding b(tape, state, true);
    std::vector<Var> vars;
    for (std::size_t k = 0; k < state.names().size(); ++k) vars.push_back(b(residual_name(k)));
    const Var motion = decoder(tape, vars);
    Var objective;
    try {
      objective = goals::goal_on_tape(goal, motion);
    } catch (const NumericError&) {
    }
    if (!objective.valid()) {
      spdlog::warn("goal became non-finite at refinement iteration {}; keeping the best iterate", it);
      out.stopped_nonfinite = true;
      break;
    }
    const double value = objective.value().item();
    out.trace.push_back({it, value, mean_keyframe_error(motion.value(), mask)});
    if (it == 0) out.initial_goal = value;
    if (value > best) {
      best = value;
      best_state = state;
      out.best_iteration = it;
      out.motion = motion.value();
    }
    const bool stalled = it > 0 && config.tolerance > 0 && value - previous < config.tolerance;
    previous = value;
    if (it == config.iterations || stalled) break;

    const auto grads = b.gradients(tape.backward(objective));
    if (config.optimizer == Optimizer::kAdam) {
      adam.ascend(state, grads);
    } else {
      for (const auto& [name, g] : grads) {
        Tensor& r = state[name];
        for (std::size_t i = 0; i < r.size(); ++i) r[i] += config.step * g[i];
      }
    }
    out.iterations_run = it + 1;
  }
  out.final_goal = best;
  for (std::size_t k = 0; k < best_state.names().size(); ++k) out.residuals.push_back(best_state[residual_name(k)]);
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  std::string text = "iteration,goal,keyframe_error\n";
  for (const auto& r : trace) text += fmt::format("{},{:.9g},{:.9g}\n", r.iteration, r.goal, r.keyframe_error);
  io::atomic_write(path, text);
}

}  // namespace mscot::refiner
