#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscot/goals/goals.hpp"
#include "mscot/guidance/guidance.hpp"

namespace mscot::bench {

// Keyframe control errors of a batch. Location rate counts keyframes whose L2
// over the masked channels exceeds the threshold; trajectory rate counts
// sequences with at least one such keyframe.
struct ControlReport {
  std::string mode;
  std::size_t sequences = 0, keyframes = 0;
  double threshold = 0;
  double average_error = 0;
  double location_rate = 0;
  double trajectory_rate = 0;
  bool vacuous = false;  // no masked keyframes at all
  guidance::DecoderPasses passes;
  double seconds = 0;
  // Wall-clock is left out unless asked for, so that reports of identical
  // runs are byte-identical.
  nlohmann::json to_json(bool with_timing = false) const;
};

ControlReport eval_control(const std::vector<ndiff::Tensor>& motions, const std::vector<goals::ControlMask>& masks,
                           double threshold);

struct SpectrogramConfig {
  std::size_t window = 16;
  std::size_t hop = 8;
};

// Rectangular-window short-time DFT energy (|X_k|^2, one-sided bins
// k = 0..W/2) summed over windows and channels.
struct Spectrum {
  std::size_t window = 0;
  std::vector<double> band_energy;
  // Share of the energy in bins above half the Nyquist frequency (k > W/4).
  double hf_fraction = 0;
};

// Windows longer than the sequence shrink to its (even) length with a warning.
Spectrum spectrogram(const ndiff::Tensor& motion, const SpectrogramConfig& config = {});

// scale,band,energy rows plus one scale,hf_fraction row per scale.
void write_spectrogram_csv(const std::filesystem::path& path, const std::vector<Spectrum>& per_scale);

}  // namespace mscot::bench
