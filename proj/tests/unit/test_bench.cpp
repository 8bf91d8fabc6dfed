#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>

#include "mscot/bench/stages.hpp"
#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"

using namespace mscot;
using namespace mscot::bench;
using ndiff::Tensor;
namespace fs = std::filesystem;

namespace {

DeskConfig tiny_config() {
  DeskConfig c = default_config();
  c.corpus.length = 16;
  c.corpus.per_family = 4;
  c.vqvae.width = 8;
  c.vqvae.quant.codebook_size = 8;
  c.vqvae.quant.code_dim = 4;
  c.vqvae.quant.base_schedule = {1, 2, 4};
  c.vqvae_train.epochs = 2;
  c.prior.block = {16, 2, 2};
  c.prior.blocks = 1;
  c.prior_train.epochs = 2;
  c.refiner.block = {8, 2, 2};
  c.refiner.blocks = 1;
  c.refiner_train.epochs = 1;
  c.control.seeds = 4;
  c.refinement.iterations = 10;
  c.harmonize();
  return c;
}

// Trained once and shared by the pipeline cases.
struct Desk {
  DeskConfig config = tiny_config();
  corpus::Corpus data = make_corpus(config);
  VqvaeCheckpoint vq = train_vqvae_stage(config, data);
  PriorCheckpoint prior = train_prior_stage(config, data, vq.model);
  RefinerCheckpoint refiner = train_refiner_stage(config, data, vq.model);
  Models models(bool with_refiner = true) const {
    return {&vq.model, &prior.model, with_refiner ? &refiner.model : nullptr};
  }
};

const Desk& desk() {
  static const Desk d;
  return d;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mscot_test_bench";
  fs::create_directories(dir);
  return dir / name;
}

goals::ControlMask exact_mask(const Tensor& motion, std::size_t keys) {
  return goals::keyframe_mask(motion, goals::even_keyframes(motion.rows(), keys), {0, 1});
}

}  // namespace

TEST_CASE("control error protocol") {
  std::vector<Tensor> motions;
  std::vector<goals::ControlMask> masks;
  for (int i = 0; i < 10; ++i) {
    Tensor m({20, 4});
    for (std::size_t e = 0; e < m.size(); ++e) m[e] = 0.1 * static_cast<double>(e % 7) - 0.2 * i;
    masks.push_back(exact_mask(m, 5));
    motions.push_back(m);
  }
  SUBCASE("exact hits give zero errors") {
    const auto r = eval_control(motions, masks, 0.25);
    CHECK(r.average_error == 0.0);
    CHECK(r.location_rate == 0.0);
    CHECK(r.trajectory_rate == 0.0);
    CHECK(r.keyframes == 50);
    CHECK_FALSE(r.vacuous);
  }
  SUBCASE("one violating keyframe in one of ten sequences") {
    const auto frame = masks[3].keyframes()[2];
    motions[3].at(frame, 0) += 0.3;  // L2 over (0, 1) = 0.3 > 0.25
    const auto r = eval_control(motions, masks, 0.25);
    CHECK(r.trajectory_rate == doctest::Approx(0.1));
    CHECK(r.location_rate == doctest::Approx(0.02));
    CHECK(r.average_error == doctest::Approx(0.3 / 50));
  }
  SUBCASE("errors at the threshold do not count") {
    motions[0].at(0, 1) += 0.25;
    CHECK(eval_control(motions, masks, 0.25).location_rate == 0.0);
  }
  SUBCASE("empty masks are vacuous") {
    std::vector<goals::ControlMask> empty(10, goals::ControlMask(20, 4));
    const auto r = eval_control(motions, empty, 0.25);
    CHECK(r.vacuous);
    CHECK(r.average_error == 0.0);
  }
  SUBCASE("misaligned batch") {
    masks.pop_back();
    CHECK_THROWS_AS(eval_control(motions, masks, 0.25), ShapeError);
  }
  SUBCASE("report JSON leaves out wall-clock by default") {
    auto r = eval_control(motions, masks, 0.25);
    r.seconds = 1.5;
    CHECK_FALSE(r.to_json().contains("seconds"));
    CHECK(r.to_json(true).contains("seconds"));
  }
}

TEST_CASE("spectrogram") {
  SUBCASE("DC lands in band 0") {
    const auto s = spectrogram(Tensor({64, 2}, 3.0));
    CHECK(s.band_energy.size() == 9);
    CHECK(s.band_energy[0] > 0);
    for (std::size_t b = 1; b < s.band_energy.size(); ++b) CHECK(s.band_energy[b] < 1e-18 * s.band_energy[0]);
    CHECK(s.hf_fraction < 1e-18);
  }
  SUBCASE("a sinusoid at bin f lands in band f") {
    for (std::size_t f : {1, 3, 6}) {
      Tensor x({64, 1});
      for (std::size_t t = 0; t < 64; ++t) x[t] = std::sin(2 * std::numbers::pi * double(f) * double(t) / 16.0);
      const auto s = spectrogram(x);
      double total = 0;
      for (double e : s.band_energy) total += e;
      CAPTURE(f);
      CHECK(s.band_energy[f] / total > 1 - 1e-12);
      CHECK(s.hf_fraction == doctest::Approx(f > 4 ? 1.0 : 0.0).epsilon(1e-9));
    }
  }
  SUBCASE("short sequences shrink the window to an even length") {
    CHECK(spectrogram(Tensor({11, 1}, 1.0)).window == 10);
    CHECK_THROWS_AS(spectrogram(Tensor({1, 1})), LengthError);
  }
}

TEST_CASE("desk config") {
  SUBCASE("round trip") {
    const auto c = tiny_config();
    CHECK(to_json(config_from_json(to_json(c))) == to_json(c));
    CHECK(config_hash(to_json(c)) == config_hash(to_json(config_from_json(to_json(c)))));
    CHECK(config_hash(to_json(c)) != config_hash(to_json(default_config())));
  }
  SUBCASE("schema violations") {
    CHECK_THROWS_AS(config_from_json({{"sed", 1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"vqvae", {{"train", {{"epoch", 3}}}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"guidance", {{"mode", "second_order"}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"corpus", {{"length", "long"}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"corpus", {{"length", 18}}}}), ConfigError);
  }
  SUBCASE("partial configs keep the defaults") {
    const auto c = config_from_json({{"seed", 7}, {"sampling", {{"cfg_weight", 2.0}}}});
    CHECK(c.seed == 7);
    CHECK(c.prior_train.seed == 7);
    CHECK(c.sampling.cfg_weight == 2.0);
    CHECK(c.vqvae_train.epochs == default_config().vqvae_train.epochs);
  }
}

TEST_CASE("checkpoints") {
  const auto& d = desk();
  SUBCASE("save, load, save is byte-identical and reloads the model") {
    save_vqvae(scratch("vq.bin"), d.vq);
    save_prior(scratch("prior.bin"), d.prior);
    save_refiner(scratch("ref.bin"), d.refiner);
    const auto vq = load_vqvae(scratch("vq.bin"));
    const auto pr = load_prior(scratch("prior.bin"));
    const auto rf = load_refiner(scratch("ref.bin"));
    CHECK(vq.model.params == d.vq.model.params);
    CHECK(vq.stats.mean == d.vq.stats.mean);
    CHECK(pr.model.params == d.prior.model.params);
    CHECK(rf.model.params == d.refiner.model.params);
    save_vqvae(scratch("vq2.bin"), vq);
    save_prior(scratch("prior2.bin"), pr);
    save_refiner(scratch("ref2.bin"), rf);
    CHECK(io::read_file(scratch("vq.bin")) == io::read_file(scratch("vq2.bin")));
    CHECK(io::read_file(scratch("prior.bin")) == io::read_file(scratch("prior2.bin")));
    CHECK(io::read_file(scratch("ref.bin")) == io::read_file(scratch("ref2.bin")));
  }
  SUBCASE("wrong component and missing file") {
    save_prior(scratch("prior.bin"), d.prior);
    CHECK_THROWS_AS(load_vqvae(scratch("prior.bin")), FormatError);
    CHECK_THROWS_AS(load_prior(scratch("absent.bin")), IoError);
  }
  SUBCASE("tensor shape disagreeing with the config") {
    auto c = io::load_container([&] {
      save_prior(scratch("prior.bin"), d.prior);
      return scratch("prior.bin");
    }());
    c.tensors.front().second = Tensor({1, 1});
    io::save_container(scratch("bad.bin"), c);
    CHECK_THROWS_AS(load_prior(scratch("bad.bin")), FormatError);
  }
}

TEST_CASE("generation pipeline") {
  const auto& d = desk();
  GenerationConfig g = generation_config(d.config);
  g.guidance.mode = guidance::Mode::kOff;
  g.refine = false;
  g.label = 1;

  SUBCASE("unguided without a refiner is prior sampling plus decoding") {
    const auto gen = generate(d.models(false), g);
    const auto schedule = d.vq.model.base_schedule();
    const auto tokens = prior::sample_hierarchy(d.prior.model, 1, schedule, g.sampling);
    CHECK(gen.tokens == tokens);
    const Tensor expect = vqvae::decode_tokens(d.vq.model, tokens, schedule, schedule.base.size());
    REQUIRE(gen.motion.shape() == expect.shape());
    double diff = 0;
    for (std::size_t i = 0; i < expect.size(); ++i) diff = std::max(diff, std::abs(gen.motion[i] - expect[i]));
    CHECK(diff < 1e-12);
    CHECK(gen.passes == guidance::DecoderPasses{});
  }
  SUBCASE("target length sets the frame count") {
    g.target_len = 6;
    const auto gen = generate(d.models(), g);
    CHECK(gen.schedule.effective.back() == 6);
    CHECK(gen.motion.rows() == 24);
    CHECK(intermediate_motions(d.vq.model, gen).size() == 3);
  }
  SUBCASE("guidance without a goal is rejected") {
    g.guidance.mode = guidance::Mode::kFirstOrder;
    CHECK_THROWS_AS(generate(d.models(), g), ConfigError);
  }
  SUBCASE("paired control runs") {
    const auto task = make_control_task(d.data, d.config.control, 16);
    CHECK(task.masks.size() == 4);
    const auto off = run_control(d.models(), task, g, 0.25);
    g.guidance.mode = guidance::Mode::kFirstOrder;
    const auto fo = run_control(d.models(), task, g, 0.25);
    const auto fo2 = run_control(d.models(), task, g, 0.25);
    CHECK(off.report.mode == "off");
    CHECK(fo.report.mode == "first_order");
    CHECK(off.report.keyframes == fo.report.keyframes);
    CHECK(off.report.sequences == fo.report.sequences);
    CHECK(off.report.passes == guidance::DecoderPasses{});
    CHECK(fo.report.passes == guidance::DecoderPasses{0, 4 * 3});
    CHECK(fo.report.to_json() == fo2.report.to_json());
    // Only the guidance fields and the outputs may differ between the modes.
    auto a = off.report.to_json(), b = fo.report.to_json();
    for (const char* key : {"mode", "decoder_forwards", "decoder_forward_backwards", "average_error",
                            "location_error_rate", "trajectory_error_rate"}) {
      a.erase(key);
      b.erase(key);
    }
    CHECK(a == b);

    g.refine = true;
    const auto full = run_control(d.models(), task, g, 0.25);
    CHECK(full.report.mode == "first_order+refine");
    for (const auto& gen : full.generations) {
      REQUIRE(gen.refinement);
      CHECK(gen.refinement->final_goal >= gen.refinement->initial_goal);
    }
  }
  SUBCASE("KL diagnostics cover every scale") {
    auto control = d.config.control;
    control.seeds = 2;
    const auto task = make_control_task(d.data, control, 16);
    g.guidance.mode = guidance::Mode::kFirstOrder;
    const auto diag = kl_diagnostics(d.models(), task, g, 2);
    CHECK(diag.instances == 2);
    REQUIRE(diag.kl.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(diag.kl[k] >= 0);
      CHECK(diag.code_distance[k] >= 0);
    }
  }
}

TEST_CASE("stages are deterministic") {
  const auto& d = desk();
  const auto again = train_vqvae_stage(d.config, make_corpus(d.config));
  CHECK(again.model.params == d.vq.model.params);
  const auto curve = validation_curve(d.vq.model, d.data);
  CHECK(curve.mean_cumulative.size() == 3);
  CHECK(curve.steps == 2 * d.data.validation.size());  // K - 1 steps per sequence
}
