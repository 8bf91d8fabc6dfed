#pragma once

// Random-instance generators for every differentiable ndiff primitive. Each
// case reduces the op output to a scalar through a random linear functional so
// all output entries contribute to the checked gradient.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mscot/common/rng.hpp"
#include "mscot/ndiff/nn.hpp"
#include "mscot/ndiff/ops.hpp"

namespace mscot::testing {

struct OpInstance {
  std::vector<ndiff::Tensor> inputs;
  TapedFn fn;
};

struct OpCase {
  std::string name;
  std::function<OpInstance(Rng&)> make;
};

inline ndiff::Tensor random_tensor(Rng& rng, ndiff::Shape shape, double sd = 1.0) {
  ndiff::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

// Wraps a Var-valued map into a scalar via <W, f(x)> with a random W.
inline TapedFn contract(std::function<ndiff::Var(ndiff::Tape&, const std::vector<ndiff::Var>&)> f,
                        ndiff::Tensor weights) {
  return [f = std::move(f), weights = std::move(weights)](ndiff::Tape& tape,
                                                          const std::vector<ndiff::Var>& in) {
    const ndiff::Var y = f(tape, in);
    const ndiff::Var w = tape.constant(weights.reshaped(y.shape()));
    return ndiff::sum(ndiff::mul(y, w));
  };
}

inline OpInstance unary(Rng& rng, ndiff::Shape shape, ndiff::Shape out_shape,
                        std::function<ndiff::Var(const ndiff::Var&)> op, double sd = 1.0) {
  auto x = random_tensor(rng, shape, sd);
  auto w = random_tensor(rng, out_shape);
  return {{x}, contract([op](ndiff::Tape&, const std::vector<ndiff::Var>& in) { return op(in[0]); },
                        w)};
}

inline OpInstance binary(Rng& rng, ndiff::Shape a, ndiff::Shape b, ndiff::Shape out,
                         std::function<ndiff::Var(const ndiff::Var&, const ndiff::Var&)> op) {
  auto x = random_tensor(rng, a);
  auto y = random_tensor(rng, b);
  auto w = random_tensor(rng, out);
  return {{x, y},
          contract([op](ndiff::Tape&, const std::vector<ndiff::Var>& in) { return op(in[0], in[1]); },
                   w)};
}

inline std::vector<OpCase> all_op_cases() {
  using namespace ndiff;
  std::vector<OpCase> cases;
  cases.push_back({"add", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, {3, 4}, [](auto& a, auto& b) { return add(a, b); }); }});
  cases.push_back({"sub", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, {3, 4}, [](auto& a, auto& b) { return sub(a, b); }); }});
  cases.push_back({"mul", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, {3, 4}, [](auto& a, auto& b) { return mul(a, b); }); }});
  cases.push_back({"scale", [](Rng& r) { return unary(r, {5}, {5}, [](auto& a) { return scale(a, -1.7); }); }});
  cases.push_back({"add_scalar", [](Rng& r) { return unary(r, {5}, {5}, [](auto& a) { return add_scalar(a, 0.3); }); }});
  cases.push_back({"square", [](Rng& r) { return unary(r, {2, 3}, {2, 3}, [](auto& a) { return square(a); }); }});
  cases.push_back({"silu", [](Rng& r) { return unary(r, {2, 5}, {2, 5}, [](auto& a) { return silu(a); }, 2.0); }});
  cases.push_back({"tanh", [](Rng& r) { return unary(r, {2, 5}, {2, 5}, [](auto& a) { return ndiff::tanh(a); }); }});
  cases.push_back({"add_rowvec", [](Rng& r) { return binary(r, {4, 3}, {3}, {4, 3}, [](auto& a, auto& b) { return add_rowvec(a, b); }); }});
  cases.push_back({"mean", [](Rng& r) { return unary(r, {3, 3}, {1}, [](auto& a) { return mean(a); }); }});
  cases.push_back({"mse", [](Rng& r) { return binary(r, {3, 2}, {3, 2}, {1}, [](auto& a, auto& b) { return mse(a, b); }); }});
  cases.push_back({"matmul", [](Rng& r) { return binary(r, {3, 4}, {4, 2}, {3, 2}, [](auto& a, auto& b) { return matmul(a, b); }); }});
  cases.push_back({"matmul_nt", [](Rng& r) { return binary(r, {3, 4}, {5, 4}, {3, 5}, [](auto& a, auto& b) { return matmul_nt(a, b); }); }});
  cases.push_back({"conv1d", [](Rng& r) {
    auto x = random_tensor(r, {6, 2});
    auto k = random_tensor(r, {3, 2, 3});
    auto b = random_tensor(r, {3});
    auto w = random_tensor(r, {6, 3});
    return OpInstance{{x, k, b}, contract([](Tape&, const std::vector<Var>& in) { return conv1d(in[0], in[1], in[2]); }, w)};
  }});
  cases.push_back({"conv1d_stride2", [](Rng& r) {
    auto x = random_tensor(r, {8, 2});
    auto k = random_tensor(r, {3, 2, 2});
    auto w = random_tensor(r, {4, 2});
    return OpInstance{{x, k}, contract([](Tape&, const std::vector<Var>& in) { return conv1d(in[0], in[1], std::nullopt, 2); }, w)};
  }});
  cases.push_back({"conv1d_k5", [](Rng& r) {
    auto x = random_tensor(r, {5, 1});
    auto k = random_tensor(r, {5, 1, 2});
    auto w = random_tensor(r, {5, 2});
    return OpInstance{{x, k}, contract([](Tape&, const std::vector<Var>& in) { return conv1d(in[0], in[1]); }, w)};
  }});
  cases.push_back({"interp_up", [](Rng& r) { return unary(r, {3, 2}, {7, 2}, [](auto& a) { return interp_resize(a, 7); }); }});
  cases.push_back({"interp_down", [](Rng& r) { return unary(r, {7, 2}, {3, 2}, [](auto& a) { return interp_resize(a, 3); }); }});
  cases.push_back({"interp_to_one", [](Rng& r) { return unary(r, {4, 2}, {1, 2}, [](auto& a) { return interp_resize(a, 1); }); }});
  cases.push_back({"gather_rows", [](Rng& r) {
    std::vector<std::size_t> idx{2, 0, 2, 1};
    return unary(r, {3, 2}, {4, 2}, [idx](auto& a) { return gather_rows(a, idx); });
  }});
  cases.push_back({"concat_slice_rows", [](Rng& r) {
    return binary(r, {2, 3}, {3, 3}, {3, 3}, [](auto& a, auto& b) { return slice_rows(concat_rows({a, b}), 1, 3); });
  }});
  cases.push_back({"concat_slice_cols", [](Rng& r) {
    return binary(r, {3, 2}, {3, 3}, {3, 3}, [](auto& a, auto& b) { return slice_cols(concat_cols({a, b}), 1, 3); });
  }});
  cases.push_back({"softmax_rows", [](Rng& r) { return unary(r, {3, 4}, {3, 4}, [](auto& a) { return softmax_rows(a); }); }});
  cases.push_back({"log_softmax_rows", [](Rng& r) { return unary(r, {3, 4}, {3, 4}, [](auto& a) { return log_softmax_rows(a); }); }});
  cases.push_back({"masked_softmax_rows", [](Rng& r) {
    const std::vector<std::size_t> blocks{1, 2, 2};
    return unary(r, {5, 5}, {5, 5}, [blocks](auto& a) { return masked_softmax_rows(a, AttentionMask::block_causal(blocks)); });
  }});
  cases.push_back({"layer_norm_rows", [](Rng& r) {
    auto x = random_tensor(r, {3, 5});
    auto g = random_tensor(r, {5});
    auto b = random_tensor(r, {5});
    auto w = random_tensor(r, {3, 5});
    return OpInstance{{x, g, b}, contract([](Tape&, const std::vector<Var>& in) { return layer_norm_rows(in[0], in[1], in[2]); }, w)};
  }});
  cases.push_back({"cross_entropy_sum", [](Rng& r) {
    std::vector<std::size_t> tgt{1, 3, 0};
    auto x = random_tensor(r, {3, 4});
    return OpInstance{{x}, [tgt](Tape&, const std::vector<Var>& in) { return cross_entropy_sum(in[0], tgt); }};
  }});
  cases.push_back({"transformer_block", [](Rng& r) {
    auto store = std::make_shared<ParamStore>();
    TransformerShape shape{8, 2, 2};
    init_transformer_block(*store, "blk", shape, r);
    auto x = random_tensor(r, {4, 8});
    auto w = random_tensor(r, {4, 8});
    const std::vector<std::size_t> blocks{1, 3};
    return OpInstance{{x}, contract([store, shape, blocks](Tape& tape, const std::vector<Var>& in) {
      Binding b(tape, *store, false);
      return transformer_block(b, "blk", in[0], AttentionMask::block_causal(blocks), shape);
    }, w)};
  }});
  return cases;
}

}  // namespace mscot::testing
