// mscot: desk pipeline driver. Every command reads a JSON config (optional),
// applies flag overrides, writes its outputs under --out and a run manifest.
// Failures print {"error": kind, "message": ...} on stderr.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <spdlog/spdlog.h>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "mscot/bench/stages.hpp"
#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mscot;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::optional<std::string> mode;
  std::optional<std::size_t> iters;
  std::optional<double> step;
  std::optional<double> cfg_weight;
  std::optional<std::size_t> target_len;
  std::optional<std::size_t> instances;
  std::string corpus, vqvae, prior, refiner;
  // command-specific
  std::size_t label = 0;
  std::string control_spec;
  std::optional<std::string> keyframes;
  std::optional<double> threshold;
  bool normalized = false;
  bool ablation = false;
  bool no_refiner = false;
  std::string batch;
};

// Relative --out paths hang off MSCOT_OUT_ROOT when it is set.
fs::path out_dir(const Options& o) {
  fs::path p(o.out);
  if (const char* root = std::getenv("MSCOT_OUT_ROOT"); root && *root && p.is_relative()) p = fs::path(root) / p;
  fs::create_directories(p);
  return p;
}

fs::path input_path(const Options& o, const std::string& override_path, const char* file) {
  const fs::path p = override_path.empty() ? out_dir(o) / file : fs::path(override_path);
  if (!fs::exists(p)) throw IoError("missing input: " + p.string());
  return p;
}

bench::DeskConfig desk_config(const Options& o) {
  bench::DeskConfig c = o.config_path.empty() ? bench::default_config() : bench::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.mode) c.guidance.mode = guidance::parse_mode(*o.mode);
  if (o.iters) c.refinement.iterations = *o.iters;
  if (o.step) c.refinement.step = *o.step;
  if (o.cfg_weight) c.sampling.cfg_weight = *o.cfg_weight;
  if (o.target_len) c.target_len = *o.target_len;
  c.harmonize();
  return c;
}

void write_json(const fs::path& path, const json& j) { io::atomic_write(path, j.dump(2) + "\n"); }

// Collects outputs and timings; the manifest goes out last.
class Run {
 public:
  Run(std::string command, const Options& o, const bench::DeskConfig& c)
      : command_(std::move(command)), dir_(out_dir(o)), config_(bench::to_json(c)), seed_(c.seed) {}
  fs::path file(const std::string& name) {
    outputs_.push_back(name);
    return dir_ / name;
  }
  void time(const std::string& what, double seconds) { timings_[what] = seconds; }
  void finish() {
    timings_["total"] = total_.seconds();
    write_json(dir_ / ("manifest_" + command_ + ".json"),
               bench::run_manifest(command_, config_, seed_, timings_, outputs_));
  }

 private:
  std::string command_;
  fs::path dir_;
  json config_, timings_ = json::object();
  std::uint64_t seed_;
  std::vector<std::string> outputs_;
  bench::Stopwatch total_;
};

struct Loaded {
  bench::VqvaeCheckpoint vq;
  bench::PriorCheckpoint prior;
  std::optional<bench::RefinerCheckpoint> refiner;
  bench::Models models() const { return {&vq.model, &prior.model, refiner ? &refiner->model : nullptr}; }
};

Loaded load_models(const Options& o) {
  Loaded m{bench::load_vqvae(input_path(o, o.vqvae, "vqvae.bin")),
           bench::load_prior(input_path(o, o.prior, "prior.bin")), std::nullopt};
  if (!o.no_refiner) m.refiner = bench::load_refiner(input_path(o, o.refiner, "refiner.bin"));
  return m;
}

std::size_t final_latent(const bench::DeskConfig& c, const vqvae::VqvaeModel& vq) {
  return c.target_len ? c.target_len : vq.config.quant.base_schedule.back();
}

// "5", "25%" or "100%" of the frames.
std::size_t keyframe_count(const std::string& spec, std::size_t frames) {
  if (!spec.empty() && spec.back() == '%') {
    const double pct = std::stod(spec.substr(0, spec.size() - 1));
    if (!(pct > 0 && pct <= 100)) throw ConfigError("keyframe density out of (0, 100]%: " + spec);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(pct / 100.0 * frames)));
  }
  const long n = std::stol(spec);
  if (n <= 0) throw ConfigError("keyframe count must be positive: " + spec);
  return std::min<std::size_t>(static_cast<std::size_t>(n), frames);
}

std::string motion_csv(const ndiff::Tensor& m) {
  std::ostringstream os;
  os.precision(9);
  os << "frame";
  for (std::size_t j = 0; j < m.cols(); ++j) os << ",c" << j;
  os << "\n";
  for (std::size_t t = 0; t < m.rows(); ++t) {
    os << t;
    for (std::size_t j = 0; j < m.cols(); ++j) os << ',' << m.at(t, j);
    os << "\n";
  }
  return os.str();
}

json schedule_json(const quantizer::ScaleSchedule& s) {
  return {{"base", s.base}, {"ratio", s.ratio}, {"effective", s.effective}};
}

// --- commands ---------------------------------------------------------------

void cmd_make_corpus(const Options& o) {
  const auto cfg = desk_config(o);
  Run run("make-corpus", o, cfg);
  bench::Stopwatch sw;
  const auto data = bench::make_corpus(cfg);
  corpus::save_corpus(run.file("corpus.bin"), data);
  run.time("generate", sw.seconds());
  spdlog::info("corpus: {} sequences ({} train / {} validation)", data.size(), data.train.size(),
               data.validation.size());
  run.finish();
}

void cmd_train_vqvae(const Options& o) {
  const auto cfg = desk_config(o);
  Run run("train-vqvae", o, cfg);
  const auto data = corpus::load_corpus(input_path(o, o.corpus, "corpus.bin"));
  bench::Stopwatch sw;
  std::vector<vqvae::EpochLoss> log;
  const auto ckpt = bench::train_vqvae_stage(cfg, data, &log);
  run.time("train", sw.seconds());
  bench::save_vqvae(run.file("vqvae.bin"), ckpt);
  vqvae::write_loss_csv(run.file("vqvae_loss.csv"), log);
  const auto curve = bench::validation_curve(ckpt.model, data);
  write_json(run.file("reconstruction.json"),
             json{{"format_version", io::kFormatVersion},
              {"baseline", curve.baseline},
              {"mean_cumulative", curve.mean_cumulative},
              {"steps", curve.steps},
              {"non_increasing", curve.non_increasing},
              {"non_increasing_fraction", curve.steps ? double(curve.non_increasing) / double(curve.steps) : 0.0}});
  run.finish();
}

void cmd_train_prior(const Options& o) {
  const auto cfg = desk_config(o);
  Run run("train-prior", o, cfg);
  const auto data = corpus::load_corpus(input_path(o, o.corpus, "corpus.bin"));
  const auto vq = bench::load_vqvae(input_path(o, o.vqvae, "vqvae.bin"));
  bench::Stopwatch sw;
  std::vector<prior::PriorEpoch> log;
  const auto ckpt = bench::train_prior_stage(cfg, data, vq.model, &log);
  run.time("train", sw.seconds());
  bench::save_prior(run.file("prior.bin"), ckpt);
  std::ostringstream os;
  os << "epoch,loss,accuracy\n";
  for (const auto& e : log) os << e.epoch << ',' << e.loss << ',' << e.accuracy << "\n";
  io::atomic_write(run.file("prior_loss.csv"), os.str());

  const auto val = bench::tokenize_split(vq.model, data, data.validation);
  double loss = 0;
  for (std::size_t i = 0; i < val.tokens.size(); ++i)
    loss += prior::sequence_loss(ckpt.model, val.tokens[i], val.labels[i], vq.model.base_schedule());
  std::size_t positions = 0;
  for (auto l : vq.model.config.quant.base_schedule) positions += l;
  write_json(run.file("prior_eval.json"),
             json{{"format_version", io::kFormatVersion},
              {"validation_loss", val.tokens.empty() ? 0.0 : loss / double(val.tokens.size())},
              {"uniform_loss", double(positions) * std::log(double(ckpt.model.config.vocab))},
              {"validation_accuracy",
               prior::teacher_forced_accuracy(ckpt.model, val.tokens, val.labels, vq.model.base_schedule())}});
  run.finish();
}

void cmd_train_refiner(const Options& o) {
  const auto cfg = desk_config(o);
  Run run("train-refiner", o, cfg);
  const auto data = corpus::load_corpus(input_path(o, o.corpus, "corpus.bin"));
  const auto vq = bench::load_vqvae(input_path(o, o.vqvae, "vqvae.bin"));
  bench::Stopwatch sw;
  std::vector<refiner::RefinerEpoch> log;
  const auto ckpt = bench::train_refiner_stage(cfg, data, vq.model, &log);
  run.time("train", sw.seconds());
  bench::save_refiner(run.file("refiner.bin"), ckpt);
  std::ostringstream os;
  os << "epoch,loss,baseline\n";
  for (const auto& e : log) os << e.epoch << ',' << e.loss << ',' << e.baseline << "\n";
  io::atomic_write(run.file("refiner_loss.csv"), os.str());
  const auto val = refiner::evaluate_refiner(ckpt.model, vq.model, data.normalized(data.validation));
  write_json(run.file("refiner_eval.json"), {{"format_version", io::kFormatVersion},
                                             {"validation_mse", val.loss},
                                             {"validation_mse_unrefined", val.baseline}});
  run.finish();
}

void cmd_generate(const Options& o) {
  auto cfg = desk_config(o);
  Run run("generate", o, cfg);
  const auto m = load_models(o);
  auto gcfg = bench::generation_config(cfg);
  gcfg.label = o.label;
  gcfg.target_len = cfg.target_len;
  if (o.label >= m.prior.model.config.num_classes) throw ConfigError("label out of range");
  const std::size_t frames = vqvae::kDownsample * final_latent(cfg, m.vq.model);

  std::optional<goals::ControlSpec> spec;
  if (!o.control_spec.empty()) {
    const fs::path p(o.control_spec);
    spec = goals::parse_control_spec(json::parse(io::read_file(p)), frames, corpus::kChannels, p.parent_path());
  } else if (gcfg.guidance.mode != guidance::Mode::kOff || gcfg.refine) {
    spdlog::info("no control spec: sampling the prior without guidance or refinement");
    gcfg.guidance.mode = guidance::Mode::kOff;
    gcfg.refine = false;
  }
  const goals::GoalPtr goal = spec ? goals::GoalPtr(spec->goal) : nullptr;
  const goals::ControlMask* mask = spec && spec->joint ? &spec->joint->mask() : nullptr;

  bench::Stopwatch sw;
  const auto g = bench::generate(m.models(), gcfg, goal, mask);
  run.time("generate", sw.seconds());
  run.time("guidance", g.guidance_seconds);
  run.time("refinement", g.refinement_seconds);

  io::atomic_write(run.file("motion.csv"), motion_csv(corpus::denormalize(g.motion, m.vq.stats)));
  json report{{"format_version", io::kFormatVersion},
              {"label", o.label},
              {"mode", guidance::to_string(gcfg.guidance.mode)},
              {"refined", g.refinement.has_value()},
              {"frames", g.motion.rows()},
              {"schedule", schedule_json(g.schedule)},
              {"tokens", g.tokens.scales},
              {"decoder_forwards", g.passes.forward},
              {"decoder_forward_backwards", g.passes.backward},
              {"skipped_scales", g.skipped_scales}};
  if (goal) report["goal"] = goal->evaluate(g.motion).value;
  if (mask) report["keyframe_errors"] = goals::keyframe_errors(g.motion, *mask);
  if (g.refinement) {
    report["refinement"] = {{"initial_goal", g.refinement->initial_goal},
                            {"final_goal", g.refinement->final_goal},
                            {"iterations_run", g.refinement->iterations_run},
                            {"best_iteration", g.refinement->best_iteration},
                            {"stopped_nonfinite", g.refinement->stopped_nonfinite}};
    refiner::write_trace_csv(run.file("refinement_trace.csv"), g.refinement->trace);
  }
  write_json(run.file("generation.json"), report);
  run.finish();
}

io::Container batch_container(const bench::ControlRun& r, const bench::ControlTask& task) {
  io::Container c;
  c.component = "control-batch";
  c.meta = {{"mode", r.report.mode}, {"count", r.generations.size()},
            {"decoder_forwards", r.report.passes.forward},
            {"decoder_forward_backwards", r.report.passes.backward}};
  for (std::size_t i = 0; i < r.generations.size(); ++i) {
    const auto& mask = task.masks[i];
    ndiff::Tensor bits({mask.frames, mask.channels}), target({mask.frames, mask.channels});
    for (std::size_t e = 0; e < bits.size(); ++e) {
      bits[e] = mask.mask[e];
      target[e] = mask.target[e];
    }
    c.tensors.emplace_back("motion." + std::to_string(i), r.generations[i].motion);
    c.tensors.emplace_back("mask." + std::to_string(i), bits);
    c.tensors.emplace_back("target." + std::to_string(i), target);
  }
  return c;
}

void cmd_control(const Options& o) {
  auto cfg = desk_config(o);
  if (o.instances) cfg.control.seeds = *o.instances;
  Run run("control", o, cfg);
  const auto m = load_models(o);
  const auto data = corpus::load_corpus(input_path(o, o.corpus, "corpus.bin"));
  const std::size_t frames = vqvae::kDownsample * final_latent(cfg, m.vq.model);
  if (o.keyframes) cfg.control.keyframes = keyframe_count(*o.keyframes, frames);
  const double threshold = o.threshold.value_or(cfg.control.threshold);
  const auto task = bench::make_control_task(data, cfg.control, frames);
  auto base = bench::generation_config(cfg);
  base.target_len = cfg.target_len;

  // The ablation runs the four paired variants on the same seeds.
  std::vector<bench::GenerationConfig> variants{base};
  if (o.ablation) {
    variants.clear();
    for (auto [mode, refine] : {std::pair{guidance::Mode::kOff, false}, {base.guidance.mode, false},
                                {guidance::Mode::kOff, true}, {base.guidance.mode, true}}) {
      auto v = base;
      v.guidance.mode = mode;
      v.refine = refine && base.refinement.iterations > 0;
      variants.push_back(v);
    }
  }

  json report{{"format_version", io::kFormatVersion}, {"keyframes", cfg.control.keyframes},
              {"frames", frames},                     {"sigma", cfg.control.sigma},
              {"instances", task.masks.size()},       {"runs", json::array()}};
  std::optional<bench::ControlRun> last;
  for (const auto& v : variants) {
    auto r = bench::run_control(m.models(), task, v, threshold);
    run.time(r.report.mode, r.report.seconds);
    report["runs"].push_back(r.report.to_json());
    spdlog::info("{}: average error {:.4f}, location rate {:.4f}", r.report.mode, r.report.average_error,
                 r.report.location_rate);
    last = std::move(r);
  }
  if (!o.ablation) report["report"] = report["runs"].front();
  write_json(run.file("control_report.json"), report);
  io::save_container(run.file("control_batch.bin"), batch_container(*last, task));
  if (!last->generations.empty() && last->generations.front().refinement)
    refiner::write_trace_csv(run.file("refinement_trace.csv"), last->generations.front().refinement->trace);
  run.finish();
}

void cmd_eval_control(const Options& o) {
  const auto cfg = desk_config(o);
  Run run("eval-control", o, cfg);
  const auto c = io::load_container(input_path(o, o.batch, "control_batch.bin"), "control-batch");
  const std::size_t n = c.meta.at("count").get<std::size_t>();
  std::vector<ndiff::Tensor> motions;
  std::vector<goals::ControlMask> masks;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& bits = c.tensor("mask." + std::to_string(i));
    const auto& target = c.tensor("target." + std::to_string(i));
    goals::ControlMask mask(bits.rows(), bits.cols());
    for (std::size_t t = 0; t < bits.rows(); ++t)
      for (std::size_t j = 0; j < bits.cols(); ++j)
        if (bits.at(t, j) != 0.0) mask.set(t, j, target.at(t, j));
    motions.push_back(c.tensor("motion." + std::to_string(i)));
    masks.push_back(std::move(mask));
  }
  auto rep = bench::eval_control(motions, masks, o.threshold.value_or(cfg.control.threshold));
  rep.mode = c.meta.at("mode").get<std::string>();
  rep.passes = {c.meta.at("decoder_forwards").get<std::size_t>(),
                c.meta.at("decoder_forward_backwards").get<std::size_t>()};
  json j = rep.to_json();
  j["format_version"] = io::kFormatVersion;
  write_json(run.file("eval_report.json"), j);
  run.finish();
}

int cmd_check_bound(const Options& o) {
  const auto cfg = desk_config(o);
  Run run("check-bound", o, cfg);
  guidance::BoundConfig b;
  b.instances = o.instances.value_or(1000);
  b.normalized = o.normalized;
  b.seed = cfg.seed;
  bench::Stopwatch sw;
  const auto rep = guidance::verify_bound(b);
  run.time("verify", sw.seconds());
  json j = rep.to_json(true);
  j["format_version"] = io::kFormatVersion;
  j["normalized"] = b.normalized;
  write_json(run.file("bound_report.json"), j);
  run.finish();
  if (rep.violations != 0) {
    std::cerr << json{{"error", "bound_violation"},
                      {"message", std::to_string(rep.violations) + " of " + std::to_string(b.instances) +
                                      " instances violate the bound"}}
                     .dump()
              << "\n";
    return 10;
  }
  return 0;
}

void cmd_kl_diag(const Options& o) {
  auto cfg = desk_config(o);
  if (cfg.guidance.mode == guidance::Mode::kOff) cfg.guidance.mode = guidance::Mode::kFirstOrder;
  Run run("kl-diag", o, cfg);
  const auto m = load_models(o);
  const auto data = corpus::load_corpus(input_path(o, o.corpus, "corpus.bin"));
  const std::size_t frames = vqvae::kDownsample * final_latent(cfg, m.vq.model);
  const auto task = bench::make_control_task(data, cfg.control, frames);
  auto base = bench::generation_config(cfg);
  base.target_len = cfg.target_len;
  bench::Stopwatch sw;
  const auto d = bench::kl_diagnostics(m.models(), task, base, o.instances.value_or(8));
  run.time("diagnostics", sw.seconds());
  json j = d.to_json();
  j["format_version"] = io::kFormatVersion;
  j["normalized_codebook"] = m.vq.model.config.quant.normalized;
  write_json(run.file("kl_diag.json"), j);
  run.finish();
}

void cmd_spectrogram(const Options& o) {
  const auto cfg = desk_config(o);
  Run run("spectrogram", o, cfg);
  const auto m = load_models(o);
  auto gcfg = bench::generation_config(cfg);
  gcfg.guidance.mode = guidance::Mode::kOff;
  gcfg.refine = false;
  gcfg.target_len = cfg.target_len;
  const std::size_t n = o.instances.value_or(100);
  std::vector<bench::Spectrum> mean;
  std::vector<double> hf_mean;
  std::size_t trend = 0;
  bench::Stopwatch sw;
  for (std::size_t i = 0; i < n; ++i) {
    gcfg.label = i % m.prior.model.config.num_classes;
    gcfg.sampling.seed = bench::instance_seed(cfg.seed, i);
    const auto g = bench::generate(m.models(), gcfg);
    const auto inter = bench::intermediate_motions(m.vq.model, g);
    if (mean.empty()) {
      mean.resize(inter.size());
      hf_mean.assign(inter.size(), 0.0);
    }
    std::vector<double> hf;
    for (std::size_t k = 0; k < inter.size(); ++k) {
      const auto s = bench::spectrogram(inter[k]);
      if (mean[k].band_energy.empty()) mean[k] = bench::Spectrum{s.window, std::vector<double>(s.band_energy.size()), 0};
      for (std::size_t b = 0; b < s.band_energy.size(); ++b) mean[k].band_energy[b] += s.band_energy[b] / double(n);
      mean[k].hf_fraction += s.hf_fraction / double(n);
      hf.push_back(s.hf_fraction);
    }
    trend += hf.front() < hf.back();
  }
  run.time("spectrogram", sw.seconds());
  for (std::size_t k = 0; k < mean.size(); ++k) hf_mean[k] = mean[k].hf_fraction;
  bench::write_spectrogram_csv(run.file("spectrogram.csv"), mean);
  write_json(run.file("spectrogram.json"), {{"format_version", io::kFormatVersion},
                                            {"samples", n},
                                            {"mean_hf_fraction", hf_mean},
                                            {"coarse_below_fine", trend},
                                            {"coarse_below_fine_fraction", n ? double(trend) / double(n) : 0.0}});
  run.finish();
}

int exit_code(const std::string& kind) {
  static const std::map<std::string, int> codes{
      {"config", 3},   {"io", 4},        {"format", 5},         {"shape", 6},     {"length", 6},
      {"numeric", 7},  {"underflow", 7}, {"cost_guard", 8},     {"contract", 9},  {"stale_tape", 9},
      {"freeze", 9},   {"degenerate_mask", 9}};
  const auto it = codes.find(kind);
  return it == codes.end() ? 1 : it->second;
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-scale token guidance desk pipeline"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c, bool models) {
    c->add_option("--config", o.config_path, "JSON config")->check(CLI::ExistingFile);
    c->add_option("--seed", o.seed, "run seed");
    c->add_option("--out", o.out, "output directory (relative to MSCOT_OUT_ROOT when set)");
    c->add_option("--mode", o.mode, "guidance mode")->check(CLI::IsMember({"off", "first_order", "exact"}));
    c->add_option("--iters", o.iters, "test-time refinement iterations (0 disables)");
    c->add_option("--step", o.step, "refinement step size");
    c->add_option("--cfg-weight", o.cfg_weight, "classifier-free guidance weight");
    c->add_option("--target-len", o.target_len, "final latent length");
    c->add_option("--corpus", o.corpus, "corpus container (default <out>/corpus.bin)");
    c->add_option("--vqvae", o.vqvae, "tokenizer checkpoint (default <out>/vqvae.bin)");
    if (models) {
      c->add_option("--prior", o.prior, "prior checkpoint (default <out>/prior.bin)");
      c->add_option("--refiner", o.refiner, "refiner checkpoint (default <out>/refiner.bin)");
      c->add_flag("--no-refiner", o.no_refiner, "skip the refinement network");
    }
  };

  auto* make_corpus = app.add_subcommand("make-corpus", "generate the synthetic trajectory corpus");
  auto* train_vqvae = app.add_subcommand("train-vqvae", "train the multi-scale tokenizer");
  auto* train_prior = app.add_subcommand("train-prior", "train the scale-autoregressive prior");
  auto* train_refiner = app.add_subcommand("train-refiner", "train the refinement network");
  auto* generate = app.add_subcommand("generate", "sample one motion, optionally under a control spec");
  auto* control = app.add_subcommand("control", "keyframe control batch on validation targets");
  auto* eval = app.add_subcommand("eval-control", "re-score a saved control batch");
  auto* bound = app.add_subcommand("check-bound", "random-instance check of the KL bound");
  auto* kl = app.add_subcommand("kl-diag", "per-scale KL of exact vs first-order posteriors");
  auto* spec = app.add_subcommand("spectrogram", "per-scale spectra of unguided samples");
  for (auto* c : {make_corpus, train_vqvae, train_prior, train_refiner, bound}) common(c, false);
  for (auto* c : {generate, control, eval, kl, spec}) common(c, true);

  generate->add_option("--label", o.label, "condition label");
  generate->add_option("--control", o.control_spec, "control spec JSON")->check(CLI::ExistingFile);
  control->add_option("--instances", o.instances, "number of control instances");
  control->add_option("--keyframes", o.keyframes, "keyframes per sequence: a count or a percentage");
  control->add_option("--threshold", o.threshold, "keyframe error threshold (normalized units)");
  control->add_flag("--ablation", o.ablation, "run off / guidance / refinement / full on the same seeds");
  eval->add_option("--batch", o.batch, "control batch container (default <out>/control_batch.bin)");
  eval->add_option("--threshold", o.threshold, "keyframe error threshold (normalized units)");
  bound->add_option("--instances", o.instances, "number of random instances");
  bound->add_flag("--normalized", o.normalized, "l2-normalized codebooks");
  kl->add_option("--instances", o.instances, "number of guided instances");
  spec->add_option("--instances", o.instances, "number of samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*make_corpus) cmd_make_corpus(o);
    else if (*train_vqvae) cmd_train_vqvae(o);
    else if (*train_prior) cmd_train_prior(o);
    else if (*train_refiner) cmd_train_refiner(o);
    else if (*generate) cmd_generate(o);
    else if (*control) cmd_control(o);
    else if (*eval) cmd_eval_control(o);
    else if (*bound) return cmd_check_bound(o);
    else if (*kl) cmd_kl_diag(o);
    else if (*spec) cmd_spectrogram(o);
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), exit_code(e.kind()));
  } catch (const json::exception& e) {
    return fail("config", e.what(), exit_code("config"));
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
