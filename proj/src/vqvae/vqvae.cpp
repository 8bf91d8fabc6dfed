#include "mscot/vqvae/vqvae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"
#include "mscot/ndiff/optim.hpp"

namespace mscot::vqvae {

using ndiff::Binding;
using ndiff::Tape;
using ndiff::Tensor;
using ndiff::Var;
using quantizer::ScaleSchedule;
using quantizer::TokenHierarchy;

quantizer::ScaleSchedule VqvaeModel::base_schedule() const {
  return ScaleSchedule::from_base(config.quant.base_schedule);
}

quantizer::ScaleSchedule VqvaeModel::schedule_for(std::size_t latent_len) const {
  return quantizer::adapt_schedule(base_schedule(), latent_len);
}

namespace {

void init_res_block(ndiff::ParamStore& s, const std::string& prefix, std::size_t w, Rng& rng) {
  ndiff::init_conv(s, prefix + ".a", 3, w, w, rng);
  ndiff::init_conv(s, prefix + ".b", 3, w, w, rng, 0.5);
}

Var res_block(Binding& b, const std::string& prefix, const Var& x, ndiff::Activation act) {
  Var h = ndiff::conv(b, prefix + ".a", ndiff::activate(x, act));
  h = ndiff::conv(b, prefix + ".b", ndiff::activate(h, act));
  return ndiff::add(x, h);
}

}  // namespace

VqvaeModel init_vqvae(const VqvaeConfig& config, std::uint64_t seed) {
  VqvaeModel m{config, {}};
  Rng rng(seed, "vqvae.init");
  const std::size_t w = config.width, d = config.quant.code_dim;
  auto& s = m.params;
  ndiff::init_conv(s, "enc.in", 3, config.channels, w, rng);
  ndiff::init_conv(s, "enc.down1", 3, w, w, rng);
  init_res_block(s, "enc.res1", w, rng);
  ndiff::init_conv(s, "enc.down2", 3, w, w, rng);
  init_res_block(s, "enc.res2", w, rng);
  ndiff::init_conv(s, "enc.out", 3, w, d, rng);
  ndiff::init_conv(s, "dec.in", 3, d, w, rng);
  init_res_block(s, "dec.res1", w, rng);
  ndiff::init_conv(s, "dec.up1", 3, w, w, rng);
  init_res_block(s, "dec.res2", w, rng);
  ndiff::init_conv(s, "dec.up2", 3, w, w, rng);
  ndiff::init_conv(s, "dec.out", 3, w, config.channels, rng);
  quantizer::init_quantizer(s, config.quant, rng);
  return m;
}

Var encode(Binding& b, const VqvaeConfig& config, const Var& motion) {
  const auto& shape = motion.shape();
  if (shape.size() != 2 || shape[1] != config.channels)
    throw ShapeError("motion must be T x " + std::to_string(config.channels));
  if (shape[0] == 0 || shape[0] % kDownsample != 0)
    throw LengthError("motion length " + std::to_string(shape[0]) +
                      " is not a positive multiple of 4; crop it first");
  const auto act = config.activation;
  Var h = ndiff::conv(b, "enc.in", motion);
  h = ndiff::activate(ndiff::conv(b, "enc.down1", ndiff::activate(h, act), 2), act);
  h = res_block(b, "enc.res1", h, act);
  h = ndiff::activate(ndiff::conv(b, "enc.down2", h, 2), act);
  h = res_block(b, "enc.res2", h, act);
  return ndiff::conv(b, "enc.out", h);
}

Var decode(Binding& b, const VqvaeConfig& config, const Var& features) {
  const auto act = config.activation;
  const std::size_t L = features.shape()[0];
  Var h = ndiff::conv(b, "dec.in", features);
  h = res_block(b, "dec.res1", h, act);
  h = ndiff::activate(ndiff::conv(b, "dec.up1", ndiff::interp_resize(h, 2 * L)), act);
  h = res_block(b, "dec.res2", h, act);
  h = ndiff::activate(ndiff::conv(b, "dec.up2", ndiff::interp_resize(h, 4 * L)), act);
  return ndiff::conv(b, "dec.out", h);
}

Tensor crop_to_multiple(const Tensor& motion) {
  const std::size_t T = motion.rows() - motion.rows() % kDownsample;
  if (T == 0) throw LengthError("motion is shorter than 4 frames");
  Tensor out({T, motion.cols()});
  std::copy_n(motion.data().begin(), T * motion.cols(), out.data().begin());
  return out;
}

TapedForward forward_on_tape(Binding& b, const VqvaeModel& model, const Tensor& motion, double beta,
                             std::optional<std::size_t> cutoff) {
  Tape& tape = b.tape();
  TapedForward out;
  Var x = tape.constant(motion);
  out.features = encode(b, model.config, x);
  const ScaleSchedule schedule = model.schedule_for(out.features.shape()[0]);
  quantizer::ResidualPass pass =
      quantizer::residual_quantize(b, out.features.value(), schedule, model.config.quant);
  out.tokens = std::move(pass.tokens);
  const std::size_t K = schedule.scales();
  out.active_scales = std::min(cutoff.value_or(K), K);
  if (out.active_scales == 0) throw ConfigError("dropout cutoff must keep at least one scale");

  const Var f_sg = ndiff::stop_gradient(out.features);
  Var cumulative = pass.contributions[0];
  Var code, commit;
  for (std::size_t k = 0; k < out.active_scales; ++k) {
    if (k > 0) cumulative = ndiff::add(cumulative, pass.contributions[k]);
    Var c = ndiff::mse(f_sg, cumulative);
    Var m = ndiff::mse(out.features, ndiff::stop_gradient(cumulative));
    code = k == 0 ? c : ndiff::add(code, c);
    commit = k == 0 ? m : ndiff::add(commit, m);
  }
  // Straight-through: value F_active, gradient also reaches the encoder.
  Var dec_in = ndiff::add(cumulative, ndiff::sub(out.features, f_sg));
  out.reconstruction = decode(b, model.config, dec_in);
  out.l_rec = ndiff::mse(out.reconstruction, x);
  out.l_code = code;
  out.l_commit = commit;
  out.total = ndiff::add(ndiff::add(out.l_rec, out.l_code), ndiff::scale(out.l_commit, beta));
  return out;
}

ForwardResult vqvae_forward(const VqvaeModel& model, const Tensor& motion,
                            std::optional<std::size_t> cutoff, double beta) {
  Tape tape;
  Binding b(tape, model.params, false);
  TapedForward f = forward_on_tape(b, model, motion, beta, cutoff);
  return {f.tokens, f.reconstruction.value(), f.l_rec.value().item(), f.l_code.value().item(),
          f.l_commit.value().item(), f.total.value().item()};
}

TokenHierarchy tokenize(const VqvaeModel& model, const Tensor& motion) {
  Tape tape;
  Binding b(tape, model.params, false);
  const Tensor f = encode(b, model.config, tape.constant(motion)).value();
  return quantizer::encode_multiscale(f, model.params, model.config.quant, model.schedule_for(f.rows()));
}

Tensor decode_features_to_motion(const VqvaeModel& model, const Tensor& features) {
  Tape tape;
  Binding b(tape, model.params, false);
  return decode(b, model.config, tape.constant(features)).value();
}

Tensor decode_tokens(const VqvaeModel& model, const TokenHierarchy& tokens,
                     const ScaleSchedule& schedule, std::size_t upto) {
  return decode_features_to_motion(
      model, quantizer::decode_multiscale(tokens, model.params, model.config.quant, schedule, upto));
}

std::vector<EpochLoss> train_vqvae(VqvaeModel& model, const std::vector<Tensor>& corpus,
                                   const VqvaeTrainConfig& config) {
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  if (config.beta < 0) throw ConfigError("commitment weight must be non-negative");
  if (config.dropout < 0 || config.dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  for (const auto& x : corpus)
    if (x.rows() != corpus.front().rows() || x.cols() != model.config.channels)
      throw ShapeError("training sequences must share a T x D shape");

  const std::size_t K = model.config.quant.base_schedule.size();
  const std::size_t V = model.config.quant.codebook_size;
  Rng rng(config.seed, "vqvae.train");
  ndiff::Adam opt(ndiff::AdamConfig{.lr = config.lr, .clip_norm = config.clip_norm});
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochLoss> log;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    if (config.cosine_decay)
      opt.set_lr(0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * epoch / config.epochs)));
    EpochLoss row{.epoch = epoch + 1};
    std::vector<std::size_t> usage(V, 0);
    std::vector<Tensor> feature_pool;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::optional<std::size_t> cutoff;
      if (rng.bernoulli(config.dropout)) cutoff = rng.index(1, K);
      ndiff::GradMap grads;
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        Binding b(tape, model.params, true);
        TapedForward f;
        try {
          f = forward_on_tape(b, model, corpus[order[i]], config.beta, cutoff);
        } catch (const NumericError& e) {
          throw NumericError(std::string("tokenizer training diverged (") + e.what() +
                             "); lower the learning rate");
        }
        const double total = f.total.value().item();
        if (!std::isfinite(total))
          throw NumericError("non-finite tokenizer loss; lower the learning rate");
        row.rec += f.l_rec.value().item();
        row.code += f.l_code.value().item();
        row.commit += f.l_commit.value().item();
        for (const auto& scale : f.tokens.scales)
          for (std::size_t z : scale) ++usage[z];
        feature_pool.push_back(f.features.value());
        ndiff::accumulate(grads, b.gradients(tape.backward(f.total)),
                          1.0 / static_cast<double>(end - start));
      }
      // With a zero learning rate the projection and reseeding are skipped as
      // well, so parameters stay bit-identical.
      if (config.lr == 0.0) continue;
      opt.step(model.params, grads);
      if (model.config.quant.normalized) quantizer::normalize_rows(model.params[quantizer::kCodebookName]);
    }
    if (config.reseed_dead_codes && config.lr != 0.0) {
      Tensor& book = model.params[quantizer::kCodebookName];
      for (std::size_t v = 0; v < V; ++v) {
        if (usage[v] != 0) continue;
        ++row.dead_codes;
        const Tensor& src = feature_pool[rng.index(0, feature_pool.size() - 1)];
        const auto r = src.row(rng.index(0, src.rows() - 1));
        std::copy(r.begin(), r.end(), book.row(v).begin());
      }
      if (model.config.quant.normalized) quantizer::normalize_rows(book);
    }
    const double n = static_cast<double>(corpus.size());
    row.rec /= n;
    row.code /= n;
    row.commit /= n;
    spdlog::debug("vqvae epoch {}: rec {:.5f} code {:.5f} commit {:.5f} dead {}", row.epoch, row.rec,
                  row.code, row.commit, row.dead_codes);
    log.push_back(row);
    if (config.on_epoch) config.on_epoch(row, model);
  }
  return log;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& log) {
  std::string text = "epoch,L_rec,L_code,L_commit\n";
  for (const auto& r : log)
    text += fmt::format("{},{:.9g},{:.9g},{:.9g}\n", r.epoch, r.rec, r.code, r.commit);
  io::atomic_write(path, text);
}

ReconstructionCurve reconstruction_curve(const VqvaeModel& model, const Tensor& motion) {
  const TokenHierarchy tokens = tokenize(model, motion);
  const ScaleSchedule schedule = model.schedule_for(motion.rows() / kDownsample);
  ReconstructionCurve curve;
  curve.baseline = ndiff::mean_squared_error(decode_tokens(model, tokens, schedule, 0), motion);
  for (std::size_t k = 1; k <= schedule.scales(); ++k)
    curve.cumulative.push_back(
        ndiff::mean_squared_error(decode_tokens(model, tokens, schedule, k), motion));
  return curve;
}

}  // namespace mscot::vqvae
