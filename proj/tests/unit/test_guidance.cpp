#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mscot/common/error.hpp"
#include "mscot/guidance/guidance.hpp"
#include "mscot/ndiff/ops.hpp"
#include "mscot/prior/prior.hpp"
#include "support/gradcheck.hpp"

using namespace mscot;
using namespace mscot::guidance;
using ndiff::Tape;
using ndiff::Tensor;
using ndiff::Var;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Tensor t({r, c});
  for (auto& x : t.data()) x = rng.normal(0.0, sd);
  return t;
}

Tensor random_probs(Rng& rng, std::size_t rows, std::size_t V) {
  return ndiff::kernels::softmax_rows(random_matrix(rng, rows, V, 1.5));
}

// Affine decoder x = E M + c followed by an affine goal <W, x> + w0.
struct AffineTask {
  Tensor m, c, w;
  double w0;
  ScaleObjective objective() const {
    return ScaleObjective([this](Tape& t, const Var& e) {
      const Var x = ndiff::add(ndiff::matmul(e, t.constant(m)), t.constant(c));
      return ndiff::add_scalar(ndiff::sum(ndiff::mul(x, t.constant(w))), w0);
    });
  }
};

}  // namespace

TEST_CASE("exact posterior row") {
  const std::vector<double> prior{0.8, 0.2};
  SUBCASE("worked example") {
    const Tensor p = exact_posterior_row(prior, std::vector<double>{-0.5, -2.0});
    const double a = 0.8 * std::exp(-0.5), b = 0.2 * std::exp(-2.0);
    CHECK(p[0] == doctest::Approx(a / (a + b)).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.9472).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.0528).epsilon(1e-3));
  }
  SUBCASE("constant likelihood returns the prior") {
    const Tensor p = exact_posterior_row(prior, std::vector<double>{-3.0, -3.0});
    CHECK(p[0] == 0.8);
    CHECK(p[1] == 0.2);
  }
  SUBCASE("one-hot prior stays one-hot") {
    const Tensor p = exact_posterior_row(std::vector<double>{0, 1, 0}, std::vector<double>{5, -7, 2});
    CHECK(p == Tensor::matrix({{0, 1, 0}}));
  }
  SUBCASE("large log-likelihoods do not overflow") {
    const Tensor p = exact_posterior_row(prior, std::vector<double>{1000.0, 990.0});
    CHECK(std::isfinite(p[0]));
    CHECK(p[1] == doctest::Approx(0.25 * std::exp(-10.0) / (1 + 0.25 * std::exp(-10.0))));
  }
  SUBCASE("no surviving weight") {
    const double ninf = -std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(exact_posterior_row(std::vector<double>{1, 0}, std::vector<double>{ninf, 0}),
                    UnderflowError);
  }
}

TEST_CASE("first-order posterior") {
  SUBCASE("one-dimensional quadratic") {
    const Tensor codebook = Tensor::matrix({{1}, {2}});
    const Tensor probs = Tensor::matrix({{0.8, 0.2}});
    const ScaleObjective phi([](Tape&, const Var& e) { return ndiff::scale(ndiff::sum(ndiff::square(e)), -0.5); });
    const auto q = first_order_posterior(probs, codebook, phi);
    CHECK(q.expansion[0] == doctest::Approx(1.2));
    CHECK(q.gradient[0] == doctest::Approx(-1.2));
    CHECK(q.probs[0] == doctest::Approx(0.930).epsilon(5e-4));
    CHECK(q.probs[1] == doctest::Approx(0.070).epsilon(5e-3));
    const Tensor p = exact_posterior(probs, codebook, phi, q.expansion);
    CHECK(p[0] == doctest::Approx(0.947).epsilon(5e-4));
    const double kl = kl_divergence(p, q.probs);
    CHECK(kl == doctest::Approx(0.0025).epsilon(0.1));
    CHECK(kl <= 0.64);
    CHECK(phi.passes() == DecoderPasses{2, 1});
  }
  SUBCASE("zero gradient returns the prior exactly") {
    Rng rng(1);
    const Tensor codebook = random_matrix(rng, 6, 3), probs = random_probs(rng, 4, 6);
    const ScaleObjective flat([](Tape& t, const Var& e) {
      return ndiff::add(ndiff::scale(ndiff::sum(e), 0.0), t.constant(Tensor::scalar(-1.0)));
    });
    CHECK(first_order_posterior(probs, codebook, flat).probs == probs);
  }
  SUBCASE("non-finite goal skips guidance") {
    Rng rng(2);
    const Tensor codebook = random_matrix(rng, 4, 2), probs = random_probs(rng, 2, 4);
    const ScaleObjective bad([](Tape&, const Var& e) { return ndiff::scale(ndiff::sum(e), std::nan("")); });
    const auto q = first_order_posterior(probs, codebook, bad);
    CHECK(q.skipped);
    CHECK(q.probs == probs);
  }
  SUBCASE("affine goal and decoder match the exact posterior") {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      const std::size_t L = rng.index(1, 4), V = rng.index(2, 16), d = rng.index(1, 6), D = rng.index(1, 5);
      const AffineTask task{random_matrix(rng, d, D), random_matrix(rng, L, D), random_matrix(rng, L, D),
                            rng.normal()};
      const Tensor codebook = random_matrix(rng, V, d), probs = random_probs(rng, L, V);
      const auto obj = task.objective();
      const auto q = first_order_posterior(probs, codebook, obj);
      const Tensor p = exact_posterior(probs, codebook, obj, q.expansion);
      CHECK(kl_divergence(p, q.probs) <= 1e-9);
      // Independent closed form: p_v exp(e_v^T M W_l^T).
      const Tensor mw = ndiff::kernels::matmul_nt(task.m, task.w);  // d x L
      for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> w(V);
        double total = 0;
        for (std::size_t v = 0; v < V; ++v) {
          double s = 0;
          for (std::size_t j = 0; j < d; ++j) s += codebook.at(v, j) * mw.at(j, l);
          total += w[v] = probs.at(l, v) * std::exp(s);
        }
        for (std::size_t v = 0; v < V; ++v) CHECK(p.at(l, v) == doctest::Approx(w[v] / total).epsilon(1e-9));
      }
    }
  }
  SUBCASE("monotone reweighting") {
    Rng rng(4);
    const Tensor codebook = random_matrix(rng, 12, 4), probs = random_probs(rng, 3, 12);
    const Tensor ebar = expansion_points(probs, codebook);
    const Tensor grad = random_matrix(rng, 3, 4);
    const Tensor q = reweight(probs, codebook, ebar, grad);
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t u = 0; u < 12; ++u)
        for (std::size_t v = 0; v < 12; ++v) {
          const double su = ndiff::dot(codebook.row(u), grad.row(l)), sv = ndiff::dot(codebook.row(v), grad.row(l));
          if (su > sv + 1e-12) CHECK(q.at(l, u) / probs.at(l, u) > q.at(l, v) / probs.at(l, v));
        }
  }
  SUBCASE("argmax expansion") {
    const Tensor codebook = Tensor::matrix({{1, 0}, {0, 1}, {3, 3}});
    const Tensor probs = Tensor::matrix({{0.2, 0.5, 0.3}});
    CHECK(expansion_points(probs, codebook, Expansion::kArgmax) == Tensor::matrix({{0, 1}}));
    CHECK(expansion_points(probs, codebook)[0] == doctest::Approx(1.1));
  }
}

TEST_CASE("bound verification") {
  SUBCASE("random quadratic instances") {
    const auto report = verify_bound(BoundConfig{.instances = 1000, .seed = 7});
    CHECK(report.instances.size() == 1000);
    CHECK(report.violations == 0);
    for (const auto& i : report.instances) {
      CHECK(i.vocab <= 32);
      CHECK(i.dim <= 8);
      CHECK(i.sup_bound >= 0);
    }
  }
  SUBCASE("linear goals give zero divergence") {
    const auto report = verify_bound(BoundConfig{.instances = 50, .max_curvature = 0.0, .seed = 1});
    CHECK(report.violations == 0);
    CHECK(report.max_kl <= 1e-12);
  }
  SUBCASE("normalized codebooks tighten the approximation") {
    const auto plain = verify_bound(BoundConfig{.instances = 200, .normalized = false, .seed = 3});
    const auto unit = verify_bound(BoundConfig{.instances = 200, .normalized = true, .seed = 3});
    for (std::size_t i = 0; i < 200; ++i) {
      CHECK(plain.instances[i].vocab == unit.instances[i].vocab);
      CHECK(plain.instances[i].curvature == unit.instances[i].curvature);
    }
    CHECK(unit.mean_kl < plain.mean_kl);
  }
  SUBCASE("json") {
    const auto j = verify_bound(BoundConfig{.instances = 3, .seed = 2}).to_json(true);
    CHECK(j["instances"] == 3);
    CHECK(j["instance_rows"].size() == 3);
  }
}

TEST_CASE("guided scale step") {
  Rng rng(5);
  const std::size_t L = 3, V = 5, d = 2;
  const Tensor codebook = random_matrix(rng, V, d), probs = random_probs(rng, L, V);
  const AffineTask task{random_matrix(rng, d, 2), random_matrix(rng, L, 2), random_matrix(rng, L, 2), 0.0};
  const auto obj = task.objective();

  SUBCASE("off delegates to prior sampling") {
    Rng a(9), b(9);
    const auto step = guided_scale_step(probs, codebook, nullptr, StepConfig{.mode = Mode::kOff}, a);
    CHECK(step.tokens == prior::sample_rows(probs, b));
    CHECK(step.passes == DecoderPasses{});
  }
  SUBCASE("pass accounting") {
    Rng a(1);
    CHECK(guided_scale_step(probs, codebook, &obj, StepConfig{.mode = Mode::kFirstOrder}, a).passes ==
          DecoderPasses{0, 1});
    CHECK(guided_scale_step(probs, codebook, &obj, StepConfig{.mode = Mode::kExact}, a).passes ==
          DecoderPasses{V * L, 0});
  }
  SUBCASE("cost guard") {
    Rng a(1);
    CHECK_THROWS_AS(
        guided_scale_step(probs, codebook, &obj, StepConfig{.mode = Mode::kExact, .exact_cost_guard = 14}, a),
        CostGuardError);
  }
  SUBCASE("modes parse") {
    CHECK(parse_mode("first_order") == Mode::kFirstOrder);
    CHECK(to_string(parse_mode("exact")) == "exact");
    CHECK_THROWS_AS(parse_mode("fast"), ConfigError);
  }
}

TEST_CASE("tokenizer-backed objective") {
  vqvae::VqvaeConfig cfg;
  cfg.width = 8;
  cfg.quant.codebook_size = 16;
  cfg.quant.code_dim = 4;
  cfg.quant.base_schedule = {1, 2, 4};
  const auto model = init_vqvae(cfg, 3);
  const auto schedule = model.base_schedule();
  const Tensor codebook = model.codebook().entries();
  Rng rng(6);

  // Target: the decoded motion of a random hierarchy, 5 keyframes on (0, 1).
  quantizer::TokenHierarchy ref;
  for (std::size_t k = 0; k < 3; ++k) {
    ref.scales.emplace_back();
    for (std::size_t l = 0; l < schedule.length(k); ++l) ref.scales.back().push_back(rng.index(0, 15));
  }
  const Tensor target = vqvae::decode_tokens(model, ref, schedule, 3);
  const auto goal = std::make_shared<goals::JointGoal>(
      goals::keyframe_mask(target, goals::even_keyframes(target.rows(), 5), {0, 1}), 0.01);

  SUBCASE("gradient matches finite differences") {
    const Tensor prefix = quantizer::decode_multiscale(ref, model.params, cfg.quant, schedule, 1);
    const auto obj = vqvae_objective(model, schedule, 1, prefix, goal);
    const Tensor e = random_matrix(rng, 2, 4, 0.3);
    const auto vg = obj.value_and_gradient(e);
    CHECK(testing::value_grad_check([&](const Tensor& x) { return obj.value(x); }, e, vg.gradient) < 1e-5);
  }
  SUBCASE("guided sampling beats unguided on a joint target") {
    double guided = 0, plain = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      for (Mode mode : {Mode::kOff, Mode::kFirstOrder}) {
        Rng draw(seed);
        quantizer::TokenHierarchy h;
        for (std::size_t k = 0; k < 3; ++k) {
          const Tensor probs(ndiff::Shape{schedule.length(k), 16}, 1.0 / 16);
          const Tensor prefix = quantizer::decode_multiscale(h, model.params, cfg.quant, schedule, k);
          const auto obj = vqvae_objective(model, schedule, k, prefix, goal);
          h.scales.push_back(guided_scale_step(probs, codebook, &obj, StepConfig{.mode = mode}, draw).tokens);
        }
        const double value = goal->evaluate(vqvae::decode_tokens(model, h, schedule, 3)).value;
        (mode == Mode::kOff ? plain : guided) += value / 100;
      }
    }
    CAPTURE(plain);
    CAPTURE(guided);
    CHECK(guided > plain);
  }
}
