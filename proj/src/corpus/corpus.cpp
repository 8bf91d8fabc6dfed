#include "mscot/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <spdlog/spdlog.h>

#include "mscot/common/error.hpp"
#include "mscot/common/rng.hpp"
#include "mscot/io/container.hpp"

namespace mscot::corpus {

using ndiff::Tensor;

std::vector<TrajectorySpec> default_specs(std::size_t length) {
  TrajectorySpec straight{.name = "walk_straight",
                          .speed_lo = 0.03, .speed_hi = 0.06,
                          .freq_lo = 0.32, .freq_hi = 0.38,
                          .amp_lo = 0.3, .amp_hi = 0.5,
                          .noise = 0.01, .start_spread = 0.1, .length = length};
  TrajectorySpec circle = straight;
  circle.name = "walk_circle";
  circle.turn_lo = 0.05;
  circle.turn_hi = 0.1;
  TrajectorySpec stand{.name = "stand_oscillate",
                       .sway_amp = 0.15, .sway_freq = 0.03,
                       .freq_lo = 0.32, .freq_hi = 0.38,
                       .amp_lo = 0.6, .amp_hi = 0.8,
                       .noise = 0.01, .start_spread = 0.1, .length = length};
  return {straight, circle, stand};
}

namespace {

Tensor generate_one(const TrajectorySpec& s, Rng& rng) {
  if (s.length == 0 || s.length % 4 != 0)
    throw ConfigError("trajectory length must be a positive multiple of 4");
  if (s.amp_lo < 0 || s.amp_hi < 0 || s.noise < 0)
    throw ConfigError("amplitudes and noise must be non-negative");
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double speed = rng.uniform(s.speed_lo, s.speed_hi);
  const double turn = rng.uniform(s.turn_lo, s.turn_hi) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  const double freq = rng.uniform(s.freq_lo, s.freq_hi);
  const double amp = rng.uniform(s.amp_lo, s.amp_hi);
  const double phase = rng.uniform(0.0, kTwoPi);
  double heading = rng.uniform(0.0, kTwoPi);
  const double sway_phase = rng.uniform(0.0, kTwoPi);
  double px = rng.uniform(-s.start_spread, s.start_spread);
  double py = rng.uniform(-s.start_spread, s.start_spread);

  Tensor x({s.length, kChannels});
  for (std::size_t t = 0; t < s.length; ++t) {
    const double sway = s.sway_amp * std::sin(kTwoPi * s.sway_freq * t + sway_phase);
    x.at(t, 0) = px + sway + rng.normal(0.0, s.noise);
    x.at(t, 1) = py + rng.normal(0.0, s.noise);
    const double g = kTwoPi * freq * t + phase;
    x.at(t, 2) = amp * std::sin(g) + rng.normal(0.0, s.noise);
    x.at(t, 3) = amp * std::cos(g) + rng.normal(0.0, s.noise);
    px += speed * std::cos(heading);
    py += speed * std::sin(heading);
    heading += turn;
  }
  io::round_to_float(x);
  return x;
}

}  // namespace

std::vector<Tensor> Corpus::normalized(const std::vector<std::size_t>& split) const {
  std::vector<Tensor> out;
  out.reserve(split.size());
  for (std::size_t i : split) out.push_back(normalize(sequences.at(i), stats));
  return out;
}

Corpus generate_corpus(const std::vector<TrajectorySpec>& specs, std::size_t n_per_family,
                       std::uint64_t seed, double validation_fraction) {
  if (n_per_family == 0) throw ConfigError("n_per_family must be at least 1");
  if (specs.empty()) throw ConfigError("corpus needs at least one trajectory family");
  if (validation_fraction < 0 || validation_fraction >= 1)
    throw ConfigError("validation fraction must lie in [0, 1)");
  Corpus c;
  c.specs = specs;
  c.seed = seed;
  Rng split_rng(seed, "corpus.split");
  for (std::size_t f = 0; f < specs.size(); ++f) {
    Rng rng(seed, "corpus.family." + specs[f].name);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n_per_family; ++i) {
      members.push_back(c.sequences.size());
      c.sequences.push_back(generate_one(specs[f], rng));
      c.labels.push_back(f);
    }
    // Stratified split: each family contributes the same validation share.
    std::shuffle(members.begin(), members.end(), split_rng.engine());
    std::size_t n_val = static_cast<std::size_t>(std::floor(validation_fraction * n_per_family));
    if (validation_fraction > 0 && n_val == 0 && n_per_family > 1) n_val = 1;
    for (std::size_t i = 0; i < members.size(); ++i)
      (i < n_val ? c.validation : c.train).push_back(members[i]);
  }
  std::sort(c.train.begin(), c.train.end());
  std::sort(c.validation.begin(), c.validation.end());
  std::vector<Tensor> train_seqs;
  for (std::size_t i : c.train) train_seqs.push_back(c.sequences[i]);
  c.stats = compute_stats(train_seqs);
  return c;
}

Stats compute_stats(const std::vector<Tensor>& sequences) {
  if (sequences.empty()) throw ConfigError("statistics need at least one sequence");
  const std::size_t d = sequences.front().cols();
  Stats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), std::vector<bool>(d, false)};
  double n = 0;
  for (const auto& x : sequences) {
    for (std::size_t t = 0; t < x.rows(); ++t)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += x.at(t, j);
    n += static_cast<double>(x.rows());
  }
  for (double& m : s.mean) m /= n;
  for (const auto& x : sequences)
    for (std::size_t t = 0; t < x.rows(); ++t)
      for (std::size_t j = 0; j < d; ++j) s.std[j] += (x.at(t, j) - s.mean[j]) * (x.at(t, j) - s.mean[j]);
  for (std::size_t j = 0; j < d; ++j) {
    s.std[j] = std::sqrt(s.std[j] / n);
    if (!(s.std[j] > 0.0)) {
      spdlog::warn("channel {} has zero variance; std clamped to 1", j);
      s.std[j] = 1.0;
      s.clamped[j] = true;
    }
  }
  return s;
}

Tensor normalize(const Tensor& x, const Stats& stats) {
  if (x.cols() != stats.mean.size()) throw ShapeError("sequence width does not match statistics");
  Tensor y = x;
  for (std::size_t t = 0; t < y.rows(); ++t)
    for (std::size_t j = 0; j < y.cols(); ++j) y.at(t, j) = (x.at(t, j) - stats.mean[j]) / stats.std[j];
  return y;
}

Tensor denormalize(const Tensor& x, const Stats& stats) {
  if (x.cols() != stats.mean.size()) throw ShapeError("sequence width does not match statistics");
  Tensor y = x;
  for (std::size_t t = 0; t < y.rows(); ++t)
    for (std::size_t j = 0; j < y.cols(); ++j) y.at(t, j) = x.at(t, j) * stats.std[j] + stats.mean[j];
  return y;
}

nlohmann::json spec_to_json(const TrajectorySpec& s) {
  return {{"name", s.name},         {"speed", {s.speed_lo, s.speed_hi}},
          {"turn", {s.turn_lo, s.turn_hi}}, {"sway_amp", s.sway_amp},
          {"sway_freq", s.sway_freq}, {"freq", {s.freq_lo, s.freq_hi}},
          {"amp", {s.amp_lo, s.amp_hi}}, {"noise", s.noise},
          {"start_spread", s.start_spread}, {"length", s.length}};
}

TrajectorySpec spec_from_json(const nlohmann::json& j) {
  TrajectorySpec s;
  try {
    s.name = j.at("name").get<std::string>();
    s.speed_lo = j.at("speed").at(0);
    s.speed_hi = j.at("speed").at(1);
    s.turn_lo = j.value("turn", nlohmann::json::array({0.0, 0.0})).at(0);
    s.turn_hi = j.value("turn", nlohmann::json::array({0.0, 0.0})).at(1);
    s.sway_amp = j.value("sway_amp", 0.0);
    s.sway_freq = j.value("sway_freq", 0.0);
    s.freq_lo = j.at("freq").at(0);
    s.freq_hi = j.at("freq").at(1);
    s.amp_lo = j.at("amp").at(0);
    s.amp_hi = j.at("amp").at(1);
    s.noise = j.value("noise", 0.0);
    s.start_spread = j.value("start_spread", 0.0);
    s.length = j.value("length", std::size_t{64});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad trajectory spec: ") + e.what());
  }
  return s;
}

void save_corpus(const std::filesystem::path& path, const Corpus& c) {
  if (c.sequences.empty()) throw ConfigError("cannot save an empty corpus");
  io::Container box;
  box.component = "corpus";
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& s : c.specs) specs.push_back(spec_to_json(s));
  nlohmann::json clamped = nlohmann::json::array();
  for (bool b : c.stats.clamped) clamped.push_back(b);
  box.meta = {{"specs", specs},
              {"labels", c.labels},
              {"train", c.train},
              {"validation", c.validation},
              {"seed", c.seed},
              {"stats", {{"mean", c.stats.mean}, {"std", c.stats.std}, {"clamped", clamped}}}};
  const std::size_t T = c.sequences.front().rows(), D = c.sequences.front().cols();
  Tensor all({c.size(), T, D});
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.sequences[i].rows() != T || c.sequences[i].cols() != D)
      throw ShapeError("corpus sequences must share a shape");
    std::copy(c.sequences[i].data().begin(), c.sequences[i].data().end(),
              all.data().begin() + static_cast<std::ptrdiff_t>(i * T * D));
  }
  box.tensors.emplace_back("sequences", std::move(all));
  io::save_container(path, box);
}

Corpus load_corpus(const std::filesystem::path& path) {
  const io::Container box = io::load_container(path, "corpus");
  Corpus c;
  try {
    for (const auto& s : box.meta.at("specs")) c.specs.push_back(spec_from_json(s));
    c.labels = box.meta.at("labels").get<std::vector<std::size_t>>();
    c.train = box.meta.at("train").get<std::vector<std::size_t>>();
    c.validation = box.meta.at("validation").get<std::vector<std::size_t>>();
    c.seed = box.meta.at("seed").get<std::uint64_t>();
    c.stats.mean = box.meta.at("stats").at("mean").get<std::vector<double>>();
    c.stats.std = box.meta.at("stats").at("std").get<std::vector<double>>();
    c.stats.clamped = box.meta.at("stats").at("clamped").get<std::vector<bool>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corpus manifest: ") + e.what());
  }
  const Tensor& all = box.tensor("sequences");
  if (all.rank() != 3 || all.dim(0) != c.labels.size())
    throw FormatError("corpus payload does not match its labels");
  const std::size_t T = all.dim(1), D = all.dim(2);
  for (std::size_t i = 0; i < all.dim(0); ++i) {
    Tensor x({T, D});
    std::copy_n(all.data().begin() + static_cast<std::ptrdiff_t>(i * T * D), T * D, x.data().begin());
    c.sequences.push_back(std::move(x));
  }
  return c;
}

}  // namespace mscot::corpus
