#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscot/ndiff/tensor.hpp"

namespace mscot::corpus {

inline constexpr std::size_t kChannels = 4;

// One parametric trajectory family. Channels 0/1 integrate a planar velocity
// of magnitude `speed` whose heading turns at `turn` rad/frame (sign drawn at
// random); channels 2/3 carry amplitude * (sin, cos) of the gait phase.
struct TrajectorySpec {
  std::string name;
  double speed_lo = 0.0, speed_hi = 0.0;
  double turn_lo = 0.0, turn_hi = 0.0;
  double sway_amp = 0.0, sway_freq = 0.0;
  double freq_lo = 0.0, freq_hi = 0.0;
  double amp_lo = 0.0, amp_hi = 0.0;
  double noise = 0.0;
  double start_spread = 0.0;
  std::size_t length = 64;
};

std::vector<TrajectorySpec> default_specs(std::size_t length = 64);

struct Stats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> clamped;
};

struct Corpus {
  std::vector<TrajectorySpec> specs;
  std::vector<ndiff::Tensor> sequences;  // raw units, T x D
  std::vector<std::size_t> labels;       // index into specs
  std::vector<std::size_t> train, validation;
  Stats stats;
  std::uint64_t seed = 0;

  std::size_t size() const { return sequences.size(); }
  std::size_t num_classes() const { return specs.size(); }
  // Normalised copies of the selected split.
  std::vector<ndiff::Tensor> normalized(const std::vector<std::size_t>& split) const;
};

// Deterministic given `seed`. Values are rounded to float32 so that the
// container round trip is exact.
Corpus generate_corpus(const std::vector<TrajectorySpec>& specs, std::size_t n_per_family,
                       std::uint64_t seed, double validation_fraction = 0.2);

// Per-channel mean and population std; a zero std is clamped to 1 and flagged.
Stats compute_stats(const std::vector<ndiff::Tensor>& sequences);
ndiff::Tensor normalize(const ndiff::Tensor& x, const Stats& stats);
ndiff::Tensor denormalize(const ndiff::Tensor& x, const Stats& stats);

nlohmann::json spec_to_json(const TrajectorySpec& s);
TrajectorySpec spec_from_json(const nlohmann::json& j);

void save_corpus(const std::filesystem::path& path, const Corpus& c);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace mscot::corpus
