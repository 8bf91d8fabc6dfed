#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "mscot/ndiff/nn.hpp"
#include "mscot/quantizer/multiscale.hpp"

namespace mscot::vqvae {

// Temporal conv autoencoder with 4x downsampling: two stride-2 stages on the
// encoder, two interpolate-and-conv stages on the decoder, one residual conv
// block per stage on each side.
struct VqvaeConfig {
  std::size_t channels = 4;
  std::size_t width = 32;
  ndiff::Activation activation = ndiff::Activation::kSilu;
  quantizer::QuantizerConfig quant;
};

inline constexpr std::size_t kDownsample = 4;

struct VqvaeModel {
  VqvaeConfig config;
  ndiff::ParamStore params;

  quantizer::ScaleSchedule base_schedule() const;
  // Base schedule adapted so that its final length equals `latent_len`.
  quantizer::ScaleSchedule schedule_for(std::size_t latent_len) const;
  quantizer::Codebook codebook() const { return quantizer::codebook_of(params, config.quant); }
};

VqvaeModel init_vqvae(const VqvaeConfig& config, std::uint64_t seed);

// T x D -> (T/4) x d. LengthError unless T is a positive multiple of 4.
ndiff::Var encode(ndiff::Binding& b, const VqvaeConfig& config, const ndiff::Var& motion);
// L x d -> 4L x D.
ndiff::Var decode(ndiff::Binding& b, const VqvaeConfig& config, const ndiff::Var& features);

// Largest prefix whose length is a multiple of 4.
ndiff::Tensor crop_to_multiple(const ndiff::Tensor& motion);

struct TapedForward {
  quantizer::TokenHierarchy tokens;
  ndiff::Var features;  // encoder output f
  ndiff::Var reconstruction;
  ndiff::Var l_rec, l_code, l_commit, total;
  std::size_t active_scales = 0;
};

// Scales beyond `cutoff` are disabled: the decoder sees the truncated sum and
// their code/commitment terms are skipped. Tokens are produced for all scales.
TapedForward forward_on_tape(ndiff::Binding& b, const VqvaeModel& model, const ndiff::Tensor& motion,
                             double beta, std::optional<std::size_t> cutoff = std::nullopt);

struct ForwardResult {
  quantizer::TokenHierarchy tokens;
  ndiff::Tensor reconstruction;
  double l_rec = 0, l_code = 0, l_commit = 0, total = 0;
};

ForwardResult vqvae_forward(const VqvaeModel& model, const ndiff::Tensor& motion,
                            std::optional<std::size_t> cutoff = std::nullopt, double beta = 0.02);

quantizer::TokenHierarchy tokenize(const VqvaeModel& model, const ndiff::Tensor& motion);
// Decoder output for the cumulative features of scales 1..upto.
ndiff::Tensor decode_tokens(const VqvaeModel& model, const quantizer::TokenHierarchy& tokens,
                            const quantizer::ScaleSchedule& schedule, std::size_t upto);
ndiff::Tensor decode_features_to_motion(const VqvaeModel& model, const ndiff::Tensor& features);

struct EpochLoss;

struct VqvaeTrainConfig {
  double beta = 0.02;
  double dropout = 0.2;
  double lr = 2e-4;
  double clip_norm = 0.0;
  bool cosine_decay = false;  // anneal lr to 0 over the run
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  bool reseed_dead_codes = true;
  std::uint64_t seed = 0;
  std::function<void(const EpochLoss&, const VqvaeModel&)> on_epoch;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double rec = 0, code = 0, commit = 0;
  std::size_t dead_codes = 0;
};

std::vector<EpochLoss> train_vqvae(VqvaeModel& model, const std::vector<ndiff::Tensor>& corpus,
                                   const VqvaeTrainConfig& config);
void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& log);

struct ReconstructionCurve {
  double baseline = 0;              // MSE against D(0)
  std::vector<double> cumulative;   // entry k-1: MSE using scales 1..k
};

ReconstructionCurve reconstruction_curve(const VqvaeModel& model, const ndiff::Tensor& motion);

}  // namespace mscot::vqvae
