#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "mscot/common/error.hpp"
#include "mscot/ndiff/optim.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace mscot;
using namespace mscot::ndiff;

namespace {

Tensor column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

}  // namespace

TEST_CASE("conv1d worked examples") {
  Tape tape;
  SUBCASE("zero input gives zero output") {
    Rng rng(3);
    auto k = testing::random_tensor(rng, {3, 2, 4});
    Var y = conv1d(tape.constant(Tensor({5, 2})), tape.constant(k));
    CHECK(y.shape() == Shape{5, 4});
    for (double v : y.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("unit kernel is the identity") {
    Var y = conv1d(tape.constant(column({1, 2, 3})), tape.constant(Tensor({1, 1, 1}, 1.0)));
    CHECK(y.value() == column({1, 2, 3}));
  }
  SUBCASE("box kernel with zero padding") {
    Var y = conv1d(tape.constant(column({1, 2, 3})), tape.constant(Tensor({3, 1, 1}, 1.0)));
    CHECK(y.value() == column({3, 6, 5}));
  }
  SUBCASE("stride two halves the length, rounding up") {
    Var y = conv1d(tape.constant(Tensor({7, 1}, 1.0)), tape.constant(Tensor({3, 1, 1}, 1.0)),
                   std::nullopt, 2);
    CHECK(y.shape() == Shape{4, 1});
  }
  SUBCASE("bad shapes") {
    CHECK_THROWS_AS(conv1d(tape.constant(Tensor({4, 2})), tape.constant(Tensor({2, 2, 1}))),
                    ShapeError);
    CHECK_THROWS_AS(conv1d(tape.constant(Tensor({4, 2})), tape.constant(Tensor({3, 3, 1}))),
                    ShapeError);
  }
}

TEST_CASE("interp_resize worked examples") {
  Tape tape;
  CHECK(interp_resize(tape.constant(column({0, 2})), 3).value() == column({0, 1, 2}));
  CHECK(max_abs_diff(interp_resize(tape.constant(column({0, 3})), 4).value(),
                     column({0, 1, 2, 3})) < 1e-15);
  Var x = tape.constant(column({4, -1, 7}));
  Var same = interp_resize(x, 3);
  CHECK(same.id() == x.id());
  CHECK(interp_resize(tape.constant(column({0, 4})), 1).value() == column({2}));
  CHECK_THROWS_AS(interp_resize(x, 0), LengthError);
}

TEST_CASE("interp_resize round trip reproduces linear sequences") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = rng.index(1, 12);
    const std::size_t m = L + rng.index(0, 20);
    const double a = rng.normal(0, 1), b = rng.normal(0, 1);
    Tensor x({L, 2});
    for (std::size_t t = 0; t < L; ++t) {
      x.at(t, 0) = a + b * t;
      x.at(t, 1) = b - a * t;
    }
    const Tensor back = kernels::interp_resize(kernels::interp_resize(x, m), L);
    CHECK(max_abs_diff(back, x) < 1e-9);
  }
}

TEST_CASE("backward contract") {
  SUBCASE("square at three") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    auto g = tape.backward(square(x));
    CHECK(g[x].item() == doctest::Approx(6.0));
  }
  SUBCASE("constant output") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    Var c = tape.constant(Tensor::scalar(2.0));
    auto g = tape.backward(add(c, scale(x, 0.0)));
    CHECK(g[x].item() == 0.0);
  }
  SUBCASE("unused input gets zeros of its shape") {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 3}, 1.0));
    Var y = tape.leaf(Tensor({4}, 1.0));
    auto g = tape.backward(sum(x));
    CHECK(g[y] == Tensor({4}, 0.0));
  }
  SUBCASE("non-scalar output") {
    Tape tape;
    Var x = tape.leaf(Tensor({2}, 1.0));
    CHECK_THROWS_AS(tape.backward(square(x)), ContractViolation);
  }
  SUBCASE("stale and foreign outputs") {
    Tape tape, other;
    Var x = tape.leaf(Tensor::scalar(1.0));
    Var y = square(x);
    CHECK_THROWS_AS(other.backward(y), StaleTapeError);
    tape.clear();
    CHECK_THROWS_AS(tape.backward(y), StaleTapeError);
    CHECK_THROWS_AS(square(x), StaleTapeError);
  }
  SUBCASE("each recorded op is visited once") {
    Tape tape;
    Var x = tape.leaf(Tensor({3}, 0.5));
    Var a = square(x);
    Var b = silu(x);
    Var c = mul(a, b);
    Var out = sum(add(c, a));
    tape.backward(out);
    CHECK(tape.last_backward_visits() == 5);
  }
  SUBCASE("non-finite values are rejected") {
    Tape tape;
    CHECK_THROWS_AS(tape.leaf(Tensor::scalar(std::nan(""))), NumericError);
  }
}

TEST_CASE("attention block") {
  Rng rng(5);
  ParamStore store;
  TransformerShape shape{8, 2, 2};
  init_transformer_block(store, "blk", shape, rng);

  SUBCASE("single token is a deterministic function of itself") {
    auto x = testing::random_tensor(rng, {1, 8});
    Tensor first, second;
    for (Tensor* out : {&first, &second}) {
      Tape tape;
      Binding b(tape, store, false);
      *out = transformer_block(b, "blk", tape.constant(x), AttentionMask::full(1), shape).value();
    }
    CHECK(first == second);
  }
  SUBCASE("masking changes outputs when masked tokens are nonzero") {
    auto x = testing::random_tensor(rng, {4, 8});
    const std::vector<std::size_t> blocks{1, 1, 2};
    Tape tape;
    Binding b(tape, store, false);
    Var xin = tape.constant(x);
    Tensor full = transformer_block(b, "blk", xin, AttentionMask::full(4), shape).value();
    Tensor causal =
        transformer_block(b, "blk", xin, AttentionMask::block_causal(blocks), shape).value();
    CHECK(max_abs_diff(slice_rows(tape.constant(full), 0, 1).value(),
                       slice_rows(tape.constant(causal), 0, 1).value()) > 1e-6);
    // The last block sees everything under both masks.
    CHECK(max_abs_diff(slice_rows(tape.constant(full), 2, 2).value(),
                       slice_rows(tape.constant(causal), 2, 2).value()) < 1e-15);
  }
  SUBCASE("attention rows are normalised") {
    auto x = testing::random_tensor(rng, {5, 8});
    const std::vector<std::size_t> blocks{1, 2, 2};
    Tape tape;
    Binding b(tape, store, false);
    std::vector<Tensor> probs;
    multi_head_attention(b, "blk.attn", tape.constant(x), AttentionMask::block_causal(blocks), 2,
                         &probs);
    REQUIRE(probs.size() == 2);
    for (const auto& p : probs)
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (double v : p.row(i)) s += v;
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    CHECK(probs[0].at(0, 1) == 0.0);
  }
  SUBCASE("fully masked row") {
    Tape tape;
    AttentionMask mask = AttentionMask::full(3);
    for (std::size_t j = 0; j < 3; ++j) mask.set(1, j, false);
    CHECK_THROWS_AS(masked_softmax_rows(tape.constant(Tensor({3, 3}, 0.0)), mask),
                    DegenerateMaskError);
  }
}

TEST_CASE("every primitive matches central differences") {
  const auto cases = testing::all_op_cases();
  for (const auto& c : cases) {
    CAPTURE(c.name);
    Rng rng(substream(2024, c.name));
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      auto inst = c.make(rng);
      worst = std::max(worst, testing::grad_check(inst.fn, inst.inputs, {}).max_relative_error);
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("forward outputs are deterministic") {
  for (const auto& c : testing::all_op_cases()) {
    Rng r1(9), r2(9);
    auto a = c.make(r1);
    auto b = c.make(r2);
    CHECK(testing::evaluate(a.fn, a.inputs) == testing::evaluate(b.fn, b.inputs));
  }
}

TEST_CASE("adam with zero learning rate is a no-op") {
  Rng rng(1);
  ParamStore store;
  init_linear(store, "lin", 3, 2, rng);
  const ParamStore before = store;
  Adam opt(AdamConfig{.lr = 0.0});
  GradMap grads{{"lin.weight", Tensor({3, 2}, 1.0)}, {"lin.bias", Tensor({2}, 1.0)}};
  opt.step(store, grads);
  CHECK(store == before);
}
