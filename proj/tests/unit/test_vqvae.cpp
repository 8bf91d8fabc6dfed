#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mscot/common/error.hpp"
#include "mscot/corpus/corpus.hpp"
#include "mscot/vqvae/vqvae.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace mscot;
using namespace mscot::vqvae;
using ndiff::Tensor;

namespace {

VqvaeConfig small_config() {
  VqvaeConfig c;
  c.width = 8;
  c.quant.codebook_size = 16;
  c.quant.code_dim = 4;
  c.quant.base_schedule = {1, 2, 4};
  return c;
}

std::vector<Tensor> small_corpus(std::size_t n, std::size_t length = 16) {
  const auto c = corpus::generate_corpus(corpus::default_specs(length), n, 12, 0.0);
  return c.normalized(c.train);
}

}  // namespace

TEST_CASE("encoder and decoder shapes") {
  const auto model = init_vqvae(small_config(), 1);
  ndiff::Tape tape;
  ndiff::Binding b(tape, model.params, false);
  auto f = encode(b, model.config, tape.constant(Tensor({16, 4}, 0.5)));
  CHECK(f.shape() == ndiff::Shape{4, 4});
  CHECK(decode(b, model.config, f).shape() == ndiff::Shape{16, 4});
  CHECK_THROWS_AS(encode(b, model.config, tape.constant(Tensor({14, 4}))), LengthError);
  CHECK(crop_to_multiple(Tensor({14, 4})).rows() == 12);
}

TEST_CASE("decoder gradients match central differences") {
  Rng rng(3);
  const auto model = init_vqvae(small_config(), 2);
  for (int i = 0; i < 5; ++i) {
    auto f = testing::random_tensor(rng, {4, 4});
    auto w = testing::random_tensor(rng, {16, 4});
    auto fn = testing::contract(
        [&](ndiff::Tape& tape, const std::vector<ndiff::Var>& in) {
          ndiff::Binding b(tape, model.params, false);
          return decode(b, model.config, in[0]);
        },
        w);
    CHECK(testing::grad_check(fn, {f}, {}).max_relative_error < 1e-5);
  }
}

TEST_CASE("loss terms") {
  const auto model = init_vqvae(small_config(), 4);
  const Tensor x = small_corpus(1)[0];
  const auto full = vqvae_forward(model, x);
  CHECK(std::abs(full.total - (full.l_rec + full.l_code + 0.02 * full.l_commit)) < 1e-12);
  const auto same = vqvae_forward(model, x, 3);
  CHECK(same.total == full.total);
  CHECK(same.reconstruction == full.reconstruction);
  const auto cut = vqvae_forward(model, x, 1);
  CHECK(cut.tokens == full.tokens);
  CHECK(cut.reconstruction != full.reconstruction);
}

TEST_CASE("code and commitment vanish when features are codebook entries") {
  VqvaeConfig c = small_config();
  c.quant.base_schedule = {4};
  auto model = init_vqvae(c, 5);
  const Tensor x = small_corpus(1)[0];
  ndiff::Tape tape;
  ndiff::Binding b(tape, model.params, false);
  const Tensor f = encode(b, c, tape.constant(x)).value();
  Tensor& book = model.params[quantizer::kCodebookName];
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t j = 0; j < 4; ++j) book.at(l, j) = f.at(l, j);
  const auto out = vqvae_forward(model, x);
  CHECK(out.l_code == 0.0);
  CHECK(out.l_commit == 0.0);
  CHECK(out.tokens.scales[0] == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("stop-gradient placement") {
  const auto model = init_vqvae(small_config(), 6);
  const Tensor x = small_corpus(1)[0];
  for (int term = 0; term < 2; ++term) {
    ndiff::Tape tape;
    ndiff::Binding b(tape, model.params, true);
    auto f = forward_on_tape(b, model, x, 0.02);
    const auto grads = b.gradients(tape.backward(term == 0 ? f.l_code : f.l_commit));
    for (const auto& [name, g] : grads) {
      const bool encoder = name.rfind("enc.", 0) == 0;
      const bool quant = name.rfind("quant.", 0) == 0;
      double mag = 0;
      for (double v : g.data()) mag = std::max(mag, std::abs(v));
      CAPTURE(name);
      if (term == 0 && encoder) CHECK(mag == 0.0);
      if (term == 1 && quant) CHECK(mag == 0.0);
    }
  }
}

TEST_CASE("training contracts") {
  const auto data = small_corpus(4);
  SUBCASE("smoke run decreases the loss") {
    auto model = init_vqvae(small_config(), 7);
    VqvaeTrainConfig tc{.lr = 2e-3, .batch_size = 4, .epochs = 2, .seed = 3};
    const auto log = train_vqvae(model, data, tc);
    REQUIRE(log.size() == 2);
    CHECK(log[1].rec + log[1].code + 0.02 * log[1].commit <
          log[0].rec + log[0].code + 0.02 * log[0].commit);
  }
  SUBCASE("zero learning rate") {
    auto model = init_vqvae(small_config(), 7);
    const auto before = model.params;
    train_vqvae(model, data, VqvaeTrainConfig{.lr = 0.0, .epochs = 2, .seed = 3});
    CHECK(model.params == before);
  }
  SUBCASE("normalized codebook stays on the sphere") {
    VqvaeConfig c = small_config();
    c.quant.normalized = true;
    auto model = init_vqvae(c, 7);
    int epochs_seen = 0;
    VqvaeTrainConfig tc{.lr = 2e-3, .batch_size = 2, .epochs = 3, .seed = 3};
    tc.on_epoch = [&](const EpochLoss&, const VqvaeModel& m) {
      ++epochs_seen;
      CHECK_NOTHROW(m.codebook().validate());
    };
    train_vqvae(model, data, tc);
    CHECK(epochs_seen == 3);
  }
  SUBCASE("equal seeds give identical parameters") {
    auto a = init_vqvae(small_config(), 9), b = init_vqvae(small_config(), 9);
    VqvaeTrainConfig tc{.lr = 2e-3, .batch_size = 2, .epochs = 2, .seed = 4};
    train_vqvae(a, data, tc);
    train_vqvae(b, data, tc);
    CHECK(a.params == b.params);
  }
  SUBCASE("empty corpus") {
    auto model = init_vqvae(small_config(), 7);
    CHECK_THROWS_AS(train_vqvae(model, {}, VqvaeTrainConfig{}), ConfigError);
  }
}

TEST_CASE("memorising a tiny corpus") {
  VqvaeConfig c;
  c.width = 16;
  c.quant.codebook_size = 128;
  c.quant.code_dim = 4;
  c.quant.base_schedule = {1, 2, 4};
  auto model = init_vqvae(c, 11);
  auto specs = corpus::default_specs(16);
  for (auto& s : specs) {
    s.freq_lo = 0.05;
    s.freq_hi = 0.075;
    s.noise = 0.0;
  }
  const auto toy = corpus::generate_corpus(specs, 4, 12, 0.0);
  auto data = toy.normalized(toy.train);
  data.resize(10);
  VqvaeTrainConfig tc{.dropout = 0.0, .lr = 3e-3, .clip_norm = 1.0, .cosine_decay = true,
                      .batch_size = 2, .epochs = 2000, .reseed_dead_codes = false, .seed = 5};
  const auto log = train_vqvae(model, data, tc);
  MESSAGE("final L_rec " << log.back().rec);
  CHECK(log.back().rec < 1e-3);
}

TEST_CASE("reconstruction curve") {
  const auto model = init_vqvae(small_config(), 8);
  const Tensor x = small_corpus(1)[0];
  const auto curve = reconstruction_curve(model, x);
  REQUIRE(curve.cumulative.size() == 3);
  CHECK(curve.cumulative.back() == doctest::Approx(ndiff::mean_squared_error(vqvae_forward(model, x).reconstruction, x)).epsilon(1e-12));
}
