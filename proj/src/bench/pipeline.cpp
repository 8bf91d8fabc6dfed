#include "mscot/bench/pipeline.hpp"

#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"
#include "mscot/ndiff/ops.hpp"
#include "mscot/quantizer/multiscale.hpp"

namespace mscot::bench {

using ndiff::Tape;
using ndiff::Tensor;
using ndiff::Var;

namespace {

Tensor refined_features(const vqvae::VqvaeModel& vq, const quantizer::ScaleSchedule& schedule,
                        const std::vector<Tensor>& embeddings, const std::vector<Tensor>& residuals) {
  Tape tape;
  ndiff::Binding b(tape, vq.params, false);
  std::vector<Var> refined;
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    Tensor e = embeddings[k];
    e += residuals[k];
    refined.push_back(tape.constant(std::move(e)));
  }
  return quantizer::decode_features(b, refined, schedule, vq.config.quant.code_dim).value();
}

}  // namespace

Generation generate(const Models& models, const GenerationConfig& config, const goals::GoalPtr& goal,
                    const goals::ControlMask* mask, const ScaleObserver& observer) {
  if (!models.vq || !models.prior) throw ConfigError("generation needs a tokenizer and a prior");
  const auto& vq = *models.vq;
  const auto& pr = *models.prior;
  if (pr.config.vocab != vq.config.quant.codebook_size)
    throw ConfigError("prior vocabulary does not match the tokenizer codebook");
  const bool guided = config.guidance.mode != guidance::Mode::kOff;
  if ((guided || config.refine) && !goal) throw ConfigError("guided generation needs a goal");

  Generation g;
  g.schedule = config.target_len ? vq.schedule_for(config.target_len) : vq.base_schedule();
  const Tensor codebook = vq.params[quantizer::kCodebookName];
  guidance::EmbeddingTransform transform;
  if (models.refiner) {
    transform = [ref = models.refiner](Tape& tape, std::size_t k, const Var& e) {
      ndiff::Binding b(tape, ref->params, false);
      return ndiff::add(e, refiner::refiner_residual(b, *ref, k, e));
    };
  }

  Rng rng(config.sampling.seed, "prior.sample");
  Stopwatch guidance_clock;
  for (std::size_t k = 0; k < g.schedule.scales(); ++k) {
    const Tensor probs =
        prior::probabilities(prior::guided_logits(pr, g.tokens, config.label, g.schedule, k, config.sampling.cfg_weight),
                             config.sampling.temperature, config.sampling.top_k);
    std::optional<guidance::ScaleObjective> objective;
    if (guided)
      objective.emplace(guidance::vqvae_objective(vq, g.schedule, k,
                                                  refined_features(vq, g.schedule, g.embeddings, g.residuals), goal,
                                                  transform));
    auto step = guidance::guided_scale_step(probs, codebook, objective ? &*objective : nullptr, config.guidance, rng);
    if (observer) observer(k, probs, objective ? &*objective : nullptr, step.probs);
    g.tokens.scales.push_back(std::move(step.tokens));
    g.scale_passes.push_back(step.passes);
    g.passes.forward += step.passes.forward;
    g.passes.backward += step.passes.backward;
    g.skipped_scales += step.skipped;

    quantizer::TokenHierarchy last;
    last.scales.push_back(g.tokens.scales.back());
    g.embeddings.push_back(refiner::scale_embeddings(vq, last).front());
    g.residuals.push_back(models.refiner ? refiner::refine_tokens(*models.refiner, k, g.embeddings.back())
                                         : Tensor(g.embeddings.back().shape()));
  }
  g.guidance_seconds = guidance_clock.seconds();
  g.motion = refiner::decode_refined(vq, g.schedule, g.embeddings, g.residuals);

  if (config.refine) {
    Stopwatch clock;
    auto result = refiner::test_time_refine(refiner::vqvae_residual_decoder(vq, g.schedule, g.embeddings), g.residuals,
                                            *goal, config.refinement, mask);
    g.refinement_seconds = clock.seconds();
    g.residuals = result.residuals;
    g.motion = result.motion;
    g.refinement = std::move(result);
  }
  return g;
}

std::vector<Tensor> intermediate_motions(const vqvae::VqvaeModel& vq, const Generation& g) {
  std::vector<Tensor> out;
  for (std::size_t k = 1; k <= g.embeddings.size(); ++k)
    out.push_back(refiner::decode_refined(vq, g.schedule,
                                          std::vector<Tensor>(g.embeddings.begin(), g.embeddings.begin() + k),
                                          std::vector<Tensor>(g.residuals.begin(), g.residuals.begin() + k)));
  return out;
}

ControlTask make_control_task(const corpus::Corpus& corpus, const ControlSection& control, std::size_t frames) {
  if (corpus.validation.empty()) throw ConfigError("control task needs a validation split");
  if (control.seeds == 0) throw ConfigError("control task needs at least one instance");
  for (std::size_t c : control.channels)
    if (c >= corpus::kChannels) throw ConfigError("control channel " + std::to_string(c) + " out of range");
  const auto motions = corpus.normalized(corpus.validation);
  const auto keyframes = goals::even_keyframes(frames, control.keyframes);
  ControlTask task;
  for (std::size_t i = 0; i < control.seeds; ++i) {
    const std::size_t v = i % motions.size();
    Tensor ref = motions[v].rows() == frames ? motions[v] : ndiff::kernels::interp_resize(motions[v], frames);
    task.masks.push_back(goals::keyframe_mask(ref, keyframes, control.channels));
    task.goals.push_back(std::make_shared<goals::JointGoal>(task.masks.back(), control.sigma));
    task.labels.push_back(corpus.labels[corpus.validation[v]]);
    task.references.push_back(std::move(ref));
  }
  return task;
}

KlDiagnostics kl_diagnostics(const Models& models, const ControlTask& task, const GenerationConfig& base,
                             std::size_t instances) {
  if (base.guidance.mode == guidance::Mode::kOff) throw ConfigError("KL diagnostics need a guidance mode");
  KlDiagnostics d;
  d.instances = std::min(instances, task.masks.size());
  const Tensor& codebook = models.vq->params[quantizer::kCodebookName];
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < d.instances; ++i) {
    GenerationConfig cfg = base;
    cfg.guidance.mode = guidance::Mode::kFirstOrder;
    cfg.refine = false;
    cfg.label = task.labels[i];
    cfg.sampling.seed = instance_seed(base.sampling.seed, i);
    cfg.target_len = task.masks[i].frames / vqvae::kDownsample;
    generate(models, cfg, task.goals[i], &task.masks[i],
             [&](std::size_t k, const Tensor& probs, const guidance::ScaleObjective* obj, const Tensor& guided) {
               if (d.kl.size() <= k) {
                 d.kl.resize(k + 1, 0.0);
                 d.code_distance.resize(k + 1, 0.0);
                 counts.resize(k + 1, 0);
               }
               const Tensor ebar = guidance::expansion_points(probs, codebook, cfg.guidance.first_order.expansion);
               const Tensor exact = guidance::exact_posterior(probs, codebook, *obj, ebar);
               for (std::size_t l = 0; l < probs.rows(); ++l) {
                 Tensor p({1, probs.cols()}), q({1, probs.cols()});
                 double dist = 0;
                 for (std::size_t v = 0; v < probs.cols(); ++v) {
                   p[v] = exact.at(l, v);
                   q[v] = guided.at(l, v);
                   dist += probs.at(l, v) * ndiff::squared_distance(codebook.row(v), ebar.row(l));
                 }
                 d.kl[k] += guidance::kl_divergence(p, q);
                 d.code_distance[k] += dist;
                 ++counts[k];
               }
             });
  }
  for (std::size_t k = 0; k < d.kl.size(); ++k) {
    d.kl[k] /= static_cast<double>(counts[k]);
    d.code_distance[k] /= static_cast<double>(counts[k]);
  }
  return d;
}

nlohmann::json KlDiagnostics::to_json() const {
  return {{"instances", instances}, {"per_scale_kl", kl}, {"per_scale_code_distance", code_distance}};
}

std::uint64_t instance_seed(std::uint64_t seed, std::size_t i) { return mix_seed(substream(seed, "control") + i); }

ControlRun run_control(const Models& models, const ControlTask& task, const GenerationConfig& base,
                       double threshold) {
  ControlRun run;
  Stopwatch clock;
  std::vector<Tensor> motions;
  guidance::DecoderPasses passes;
  for (std::size_t i = 0; i < task.masks.size(); ++i) {
    GenerationConfig cfg = base;
    cfg.label = task.labels[i];
    cfg.sampling.seed = instance_seed(base.sampling.seed, i);
    cfg.target_len = task.masks[i].frames / vqvae::kDownsample;
    auto g = generate(models, cfg, task.goals[i], &task.masks[i]);
    passes.forward += g.passes.forward;
    passes.backward += g.passes.backward;
    motions.push_back(g.motion);
    run.generations.push_back(std::move(g));
  }
  run.report = eval_control(motions, task.masks, threshold);
  run.report.passes = passes;
  run.report.seconds = clock.seconds();
  run.report.mode = guidance::to_string(base.guidance.mode) + (base.refine ? "+refine" : "");
  return run;
}

nlohmann::json run_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                            const nlohmann::json& timings, const std::vector<std::string>& outputs) {
  return {{"format_version", io::kFormatVersion},
          {"command", command},
          {"config", config},
          {"config_hash", config_hash(config)},
          {"seed", seed},
          {"timings", timings},
          {"outputs", outputs}};
}

}  // namespace mscot::bench
