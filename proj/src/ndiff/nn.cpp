#include "mscot/ndiff/nn.hpp"

#include <cmath>
#include <numbers>

#include "mscot/common/error.hpp"

namespace mscot::ndiff {

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::kSilu:
      return silu(x);
    case Activation::kIdentity:
      return x;
  }
  return x;
}

void init_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng, double gain) {
  Tensor w({in, out});
  const double sd = gain / std::sqrt(static_cast<double>(in));
  for (double& v : w.data()) v = rng.normal(0.0, sd);
  store.add(prefix + ".weight", std::move(w));
  store.add(prefix + ".bias", Tensor({out}));
}

void init_conv(ParamStore& store, const std::string& prefix, std::size_t k, std::size_t in,
               std::size_t out, Rng& rng, double gain) {
  Tensor w({k, in, out});
  const double sd = gain / std::sqrt(static_cast<double>(k * in));
  for (double& v : w.data()) v = rng.normal(0.0, sd);
  store.add(prefix + ".weight", std::move(w));
  store.add(prefix + ".bias", Tensor({out}));
}

void init_conv_identity(ParamStore& store, const std::string& prefix, std::size_t k,
                        std::size_t channels) {
  if (k % 2 == 0) throw ConfigError("identity conv needs an odd kernel width");
  Tensor w({k, channels, channels});
  const std::size_t centre = (k - 1) / 2;
  for (std::size_t c = 0; c < channels; ++c)
    w[(centre * channels + c) * channels + c] = 1.0;
  store.add(prefix + ".weight", std::move(w));
  store.add(prefix + ".bias", Tensor({channels}));
}

void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t n) {
  store.add(prefix + ".gamma", Tensor({n}, 1.0));
  store.add(prefix + ".beta", Tensor({n}));
}

Var linear(Binding& b, const std::string& prefix, const Var& x) {
  return add_rowvec(matmul(x, b(prefix + ".weight")), b(prefix + ".bias"));
}

Var conv(Binding& b, const std::string& prefix, const Var& x, std::size_t stride) {
  return conv1d(x, b(prefix + ".weight"), b(prefix + ".bias"), stride);
}

Var layer_norm(Binding& b, const std::string& prefix, const Var& x) {
  return layer_norm_rows(x, b(prefix + ".gamma"), b(prefix + ".beta"));
}

void init_transformer_block(ParamStore& store, const std::string& prefix,
                            const TransformerShape& shape, Rng& rng) {
  if (shape.heads == 0 || shape.width % shape.heads != 0) {
    throw ConfigError("transformer width " + std::to_string(shape.width) +
                      " is not divisible by " + std::to_string(shape.heads) + " heads");
  }
  const std::size_t w = shape.width;
  init_layer_norm(store, prefix + ".ln1", w);
  init_linear(store, prefix + ".attn.q", w, w, rng);
  init_linear(store, prefix + ".attn.k", w, w, rng);
  init_linear(store, prefix + ".attn.v", w, w, rng);
  init_linear(store, prefix + ".attn.o", w, w, rng, 0.5);
  init_layer_norm(store, prefix + ".ln2", w);
  init_linear(store, prefix + ".mlp.fc1", w, w * shape.mlp_ratio, rng);
  init_linear(store, prefix + ".mlp.fc2", w * shape.mlp_ratio, w, rng, 0.5);
}

Var multi_head_attention(Binding& b, const std::string& prefix, const Var& x,
                         const AttentionMask& mask, std::size_t heads,
                         std::vector<Tensor>* probs_out) {
  const std::size_t n = x.value().rows();
  const std::size_t width = x.value().cols();
  if (mask.size() != n) {
    throw ShapeError("attention: mask size " + std::to_string(mask.size()) + " for " +
                     std::to_string(n) + " tokens");
  }
  const std::size_t dh = width / heads;
  const Var q = linear(b, prefix + ".q", x);
  const Var k = linear(b, prefix + ".k", x);
  const Var v = linear(b, prefix + ".v", x);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  if (probs_out) probs_out->clear();
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    const Var p = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    if (probs_out) probs_out->push_back(p.value());
    outs.push_back(matmul(p, vh));
  }
  return linear(b, prefix + ".o", heads == 1 ? outs[0] : concat_cols(outs));
}

Var transformer_block(Binding& b, const std::string& prefix, const Var& x,
                      const AttentionMask& mask, const TransformerShape& shape,
                      std::vector<Tensor>* probs_out) {
  const Var attn = multi_head_attention(b, prefix + ".attn", layer_norm(b, prefix + ".ln1", x),
                                        mask, shape.heads, probs_out);
  const Var h = add(x, attn);
  const Var mlp = linear(b, prefix + ".mlp.fc2",
                         silu(linear(b, prefix + ".mlp.fc1", layer_norm(b, prefix + ".ln2", h))));
  return add(h, mlp);
}

std::vector<double> relative_position_features(double u, std::size_t width) {
  std::vector<double> f(width, 0.0);
  for (std::size_t i = 0; 2 * i < width; ++i) {
    const double w = std::numbers::pi * static_cast<double>(i + 1);
    f[2 * i] = std::sin(w * u);
    if (2 * i + 1 < width) f[2 * i + 1] = std::cos(w * u);
  }
  return f;
}

}  // namespace mscot::ndiff
