#include "mscot/bench/metrics.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mscot/common/error.hpp"
#include "mscot/io/container.hpp"

namespace mscot::bench {

using ndiff::Tensor;

nlohmann::json ControlReport::to_json(bool with_timing) const {
  nlohmann::json j{{"mode", mode},
                   {"sequences", sequences},
                   {"keyframes", keyframes},
                   {"threshold", threshold},
                   {"average_error", average_error},
                   {"location_error_rate", location_rate},
                   {"trajectory_error_rate", trajectory_rate},
                   {"vacuous", vacuous},
                   {"decoder_forwards", passes.forward},
                   {"decoder_forward_backwards", passes.backward}};
  if (with_timing) j["seconds"] = seconds;
  return j;
}

ControlReport eval_control(const std::vector<Tensor>& motions, const std::vector<goals::ControlMask>& masks,
                           double threshold) {
  if (motions.size() != masks.size()) throw ShapeError("one control mask per motion is required");
  if (!(threshold >= 0)) throw ConfigError("control threshold must be non-negative");
  ControlReport r;
  r.sequences = motions.size();
  r.threshold = threshold;
  std::size_t violating_seqs = 0, violating_keys = 0;
  double total = 0;
  for (std::size_t i = 0; i < motions.size(); ++i) {
    const auto errs = goals::keyframe_errors(motions[i], masks[i]);
    bool any = false;
    for (double e : errs) {
      total += e;
      if (e > threshold) {
        ++violating_keys;
        any = true;
      }
    }
    r.keyframes += errs.size();
    violating_seqs += any;
  }
  if (r.keyframes == 0) {
    r.vacuous = true;
    return r;
  }
  r.average_error = total / static_cast<double>(r.keyframes);
  r.location_rate = static_cast<double>(violating_keys) / static_cast<double>(r.keyframes);
  r.trajectory_rate = static_cast<double>(violating_seqs) / static_cast<double>(r.sequences);
  return r;
}

Spectrum spectrogram(const Tensor& motion, const SpectrogramConfig& config) {
  ndiff::require_matrix(motion, "spectrogram input");
  const std::size_t T = motion.rows();
  if (T < 2) throw LengthError("spectrogram needs at least 2 frames");
  std::size_t W = config.window, hop = std::max<std::size_t>(config.hop, 1);
  if (W < 2) throw ConfigError("spectrogram window must be at least 2");
  if (W > T) {
    const std::size_t shrunk = T - T % 2;
    spdlog::warn("sequence of {} frames is shorter than the {}-frame window; using {}", T, W, shrunk);
    W = shrunk;
  }
  Spectrum s;
  s.window = W;
  s.band_energy.assign(W / 2 + 1, 0.0);
  for (std::size_t start = 0; start + W <= T; start += hop)
    for (std::size_t c = 0; c < motion.cols(); ++c)
      for (std::size_t k = 0; k <= W / 2; ++k) {
        double re = 0, im = 0;
        for (std::size_t n = 0; n < W; ++n) {
          const double phase = -2.0 * std::numbers::pi * static_cast<double>(k * n) / static_cast<double>(W);
          re += motion.at(start + n, c) * std::cos(phase);
          im += motion.at(start + n, c) * std::sin(phase);
        }
        s.band_energy[k] += re * re + im * im;
      }
  double total = 0, high = 0;
  for (std::size_t k = 0; k < s.band_energy.size(); ++k) {
    total += s.band_energy[k];
    if (4 * k > W) high += s.band_energy[k];
  }
  s.hf_fraction = total > 0 ? high / total : 0.0;
  return s;
}

void write_spectrogram_csv(const std::filesystem::path& path, const std::vector<Spectrum>& per_scale) {
  std::string text = "scale,band,energy\n";
  for (std::size_t k = 0; k < per_scale.size(); ++k)
    for (std::size_t b = 0; b < per_scale[k].band_energy.size(); ++b)
      text += fmt::format("{},{},{:.9g}\n", k + 1, b, per_scale[k].band_energy[b]);
  for (std::size_t k = 0; k < per_scale.size(); ++k)
    text += fmt::format("{},hf_fraction,{:.9g}\n", k + 1, per_scale[k].hf_fraction);
  io::atomic_write(path, text);
}

}  // namespace mscot::bench
