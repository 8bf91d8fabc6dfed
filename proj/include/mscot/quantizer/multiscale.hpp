#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mscot/common/rng.hpp"
#include "mscot/ndiff/params.hpp"
#include "mscot/quantizer/codebook.hpp"
#include "mscot/quantizer/schedule.hpp"

namespace mscot::quantizer {

// Per-scale token index sequences z_1..z_K.
struct TokenHierarchy {
  std::vector<std::vector<std::size_t>> scales;

  std::size_t size() const { return scales.size(); }
  // LengthError when scale count or lengths disagree with `schedule` (only the
  // populated prefix is checked when `allow_prefix`); ConfigError on an index
  // outside the vocabulary.
  void validate(const ScaleSchedule& schedule, std::size_t vocab, bool allow_prefix = false) const;

  bool operator==(const TokenHierarchy&) const = default;
};

struct QuantizerConfig {
  std::size_t codebook_size = 64;
  std::size_t code_dim = 16;
  bool normalized = false;
  std::size_t post_kernel = 3;
  std::vector<std::size_t> base_schedule{1, 2, 4, 8, 16};
};

// Codebook ("quant.codebook") plus one identity-initialised post-upsample
// conv per scale ("quant.post<k>").
void init_quantizer(ndiff::ParamStore& store, const QuantizerConfig& config, Rng& rng);
std::string post_conv_name(std::size_t k);
inline constexpr const char* kCodebookName = "quant.codebook";

Codebook codebook_of(const ndiff::ParamStore& store, const QuantizerConfig& config);

// Codebook rows for `tokens`, as a differentiable gather.
ndiff::Var embed_tokens(ndiff::Binding& b, const std::vector<std::size_t>& tokens);

// fhat_k = post_conv_k(Up(embeddings, final_len)).
ndiff::Var scale_contribution(ndiff::Binding& b, std::size_t k, const ndiff::Var& embeddings,
                              std::size_t final_len);

// Sum of scale contributions for the given per-scale embeddings (scales
// 1..embeddings.size()). An empty list yields zero features.
ndiff::Var decode_features(ndiff::Binding& b, const std::vector<ndiff::Var>& embeddings,
                           const ScaleSchedule& schedule, std::size_t code_dim);

struct ResidualPass {
  TokenHierarchy tokens;
  std::vector<ndiff::Var> contributions;
  // ||r_{k+1}|| (Frobenius) after each scale.
  std::vector<double> residual_norms;
  ndiff::Tensor residual;
};

// Residual loop on the tape: per scale downsample the residual, quantize each
// position, embed, upsample, post-conv and subtract.
ResidualPass residual_quantize(ndiff::Binding& b, const ndiff::Tensor& features,
                               const ScaleSchedule& schedule, const QuantizerConfig& config);

// Plain-value copy of a residual pass.
struct EncodeTrace {
  std::vector<ndiff::Tensor> contributions;
  std::vector<double> residual_norms;
  ndiff::Tensor residual;
};

TokenHierarchy encode_multiscale(const ndiff::Tensor& features, const ndiff::ParamStore& store,
                                 const QuantizerConfig& config, const ScaleSchedule& schedule,
                                 EncodeTrace* trace = nullptr);

// Cumulative reconstruction over scales 1..upto; upto == 0 gives zeros.
ndiff::Tensor decode_multiscale(const TokenHierarchy& tokens, const ndiff::ParamStore& store,
                                const QuantizerConfig& config, const ScaleSchedule& schedule,
                                std::size_t upto);

}  // namespace mscot::quantizer
