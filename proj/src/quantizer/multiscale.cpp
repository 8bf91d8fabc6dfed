#include "mscot/quantizer/multiscale.hpp"

#include <cmath>

#include "mscot/common/error.hpp"
#include "mscot/ndiff/nn.hpp"

namespace mscot::quantizer {

using ndiff::Binding;
using ndiff::Tape;
using ndiff::Tensor;
using ndiff::Var;

void TokenHierarchy::validate(const ScaleSchedule& schedule, std::size_t vocab,
                              bool allow_prefix) const {
  if (allow_prefix ? scales.size() > schedule.scales() : scales.size() != schedule.scales())
    throw LengthError("token hierarchy has " + std::to_string(scales.size()) +
                      " scales, schedule has " + std::to_string(schedule.scales()));
  for (std::size_t k = 0; k < scales.size(); ++k) {
    if (scales[k].size() != schedule.length(k))
      throw LengthError("scale " + std::to_string(k + 1) + " has " +
                        std::to_string(scales[k].size()) + " tokens, schedule expects " +
                        std::to_string(schedule.length(k)));
    for (std::size_t z : scales[k])
      if (z >= vocab)
        throw ConfigError("token index " + std::to_string(z) + " exceeds codebook size " +
                          std::to_string(vocab));
  }
}

std::string post_conv_name(std::size_t k) { return "quant.post" + std::to_string(k); }

void init_quantizer(ndiff::ParamStore& store, const QuantizerConfig& config, Rng& rng) {
  Tensor entries({config.codebook_size, config.code_dim});
  const double sd = 1.0 / std::sqrt(static_cast<double>(config.code_dim));
  for (double& v : entries.data()) v = rng.normal(0.0, sd);
  if (config.normalized) normalize_rows(entries);
  store.add(kCodebookName, std::move(entries));
  for (std::size_t k = 0; k < config.base_schedule.size(); ++k)
    ndiff::init_conv_identity(store, post_conv_name(k), config.post_kernel, config.code_dim);
}

Codebook codebook_of(const ndiff::ParamStore& store, const QuantizerConfig& config) {
  return Codebook(store[kCodebookName], config.normalized);
}

Var embed_tokens(Binding& b, const std::vector<std::size_t>& tokens) {
  return ndiff::gather_rows(b(kCodebookName), tokens);
}

Var scale_contribution(Binding& b, std::size_t k, const Var& embeddings, std::size_t final_len) {
  return ndiff::conv(b, post_conv_name(k), ndiff::interp_resize(embeddings, final_len));
}

Var decode_features(Binding& b, const std::vector<Var>& embeddings, const ScaleSchedule& schedule,
                    std::size_t code_dim) {
  if (embeddings.size() > schedule.scales())
    throw LengthError("more embedding scales than the schedule has");
  if (embeddings.empty()) return b.tape().constant(Tensor({schedule.final_length(), code_dim}));
  Var total = scale_contribution(b, 0, embeddings[0], schedule.final_length());
  for (std::size_t k = 1; k < embeddings.size(); ++k)
    total = ndiff::add(total, scale_contribution(b, k, embeddings[k], schedule.final_length()));
  return total;
}

ResidualPass residual_quantize(Binding& b, const Tensor& features, const ScaleSchedule& schedule,
                               const QuantizerConfig& config) {
  ndiff::require_matrix(features, "features");
  if (features.rows() != schedule.final_length())
    throw LengthError("features have length " + std::to_string(features.rows()) +
                      ", schedule ends at " + std::to_string(schedule.final_length()));
  if (features.cols() != config.code_dim)
    throw ShapeError("feature width " + std::to_string(features.cols()) + " != code dim " +
                     std::to_string(config.code_dim));
  const Codebook book(b(kCodebookName).value(), config.normalized);
  ResidualPass pass;
  pass.residual = features;
  for (std::size_t k = 0; k < schedule.scales(); ++k) {
    const Tensor down = ndiff::kernels::interp_resize(pass.residual, schedule.length(k));
    std::vector<std::size_t> tokens = nearest_codes(down, book);
    Var contrib = scale_contribution(b, k, embed_tokens(b, tokens), schedule.final_length());
    pass.residual -= contrib.value();
    pass.residual_norms.push_back(std::sqrt(ndiff::dot(pass.residual.data(), pass.residual.data())));
    pass.contributions.push_back(contrib);
    pass.tokens.scales.push_back(std::move(tokens));
  }
  return pass;
}

TokenHierarchy encode_multiscale(const Tensor& features, const ndiff::ParamStore& store,
                                 const QuantizerConfig& config, const ScaleSchedule& schedule,
                                 EncodeTrace* trace) {
  Tape tape;
  Binding b(tape, store, false);
  ResidualPass pass = residual_quantize(b, features, schedule, config);
  if (trace) {
    trace->contributions.clear();
    for (const Var& c : pass.contributions) trace->contributions.push_back(c.value());
    trace->residual_norms = pass.residual_norms;
    trace->residual = pass.residual;
  }
  return pass.tokens;
}

Tensor decode_multiscale(const TokenHierarchy& tokens, const ndiff::ParamStore& store,
                         const QuantizerConfig& config, const ScaleSchedule& schedule,
                         std::size_t upto) {
  if (upto > tokens.size()) throw LengthError("decode upto exceeds the populated scales");
  tokens.validate(schedule, config.codebook_size, true);
  Tape tape;
  Binding b(tape, store, false);
  std::vector<Var> emb;
  for (std::size_t k = 0; k < upto; ++k) emb.push_back(embed_tokens(b, tokens.scales[k]));
  return decode_features(b, emb, schedule, config.code_dim).value();
}

}  // namespace mscot::quantizer
