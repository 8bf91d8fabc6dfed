#pragma once

#include <string>
#include <vector>

#include "mscot/common/rng.hpp"
#include "mscot/ndiff/ops.hpp"
#include "mscot/ndiff/params.hpp"

namespace mscot::ndiff {

enum class Activation { kSilu, kIdentity };

Var activate(const Var& x, Activation act);

// Parameter initialisers. Names follow "<prefix>.weight" / "<prefix>.bias".
void init_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng, double gain = 1.0);
void init_conv(ParamStore& store, const std::string& prefix, std::size_t k, std::size_t in,
               std::size_t out, Rng& rng, double gain = 1.0);
// Kernel whose centre tap is the identity (in == out), zero bias.
void init_conv_identity(ParamStore& store, const std::string& prefix, std::size_t k,
                        std::size_t channels);
void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t n);

Var linear(Binding& b, const std::string& prefix, const Var& x);
Var conv(Binding& b, const std::string& prefix, const Var& x, std::size_t stride = 1);
Var layer_norm(Binding& b, const std::string& prefix, const Var& x);

struct TransformerShape {
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
};

// Pre-norm block: x + MHA(LN(x)) followed by x + MLP(LN(x)).
void init_transformer_block(ParamStore& store, const std::string& prefix,
                            const TransformerShape& shape, Rng& rng);

// Scaled dot-product multi-head attention with masking. When `probs_out` is
// non-null it receives one N x N attention matrix per head.
Var multi_head_attention(Binding& b, const std::string& prefix, const Var& x,
                         const AttentionMask& mask, std::size_t heads,
                         std::vector<Tensor>* probs_out = nullptr);

Var transformer_block(Binding& b, const std::string& prefix, const Var& x,
                      const AttentionMask& mask, const TransformerShape& shape,
                      std::vector<Tensor>* probs_out = nullptr);

// Fixed sinusoidal features of a relative position u in [0, 1].
std::vector<double> relative_position_features(double u, std::size_t width);

}  // namespace mscot::ndiff
