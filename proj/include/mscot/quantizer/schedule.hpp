#pragma once

#include <cstddef>
#include <vector>

namespace mscot::quantizer {

// Per-scale latent lengths. `effective` equals `base` until adapt_schedule
// rescales it to a new final length.
struct ScaleSchedule {
  std::vector<std::size_t> base;
  double ratio = 1.0;
  std::vector<std::size_t> effective;

  static ScaleSchedule from_base(std::vector<std::size_t> lengths);

  std::size_t scales() const { return effective.size(); }
  std::size_t length(std::size_t k) const { return effective.at(k); }
  std::size_t final_length() const { return effective.back(); }
  std::size_t total_length() const;

  // Throws ConfigError unless both length lists are non-empty, positive and
  // non-decreasing.
  void validate() const;

  bool operator==(const ScaleSchedule&) const = default;
};

// L'_k = ceil(target * L_k / L_K); duplicates are kept so K stays fixed.
ScaleSchedule adapt_schedule(const ScaleSchedule& schedule, std::size_t target_len);

}  // namespace mscot::quantizer
