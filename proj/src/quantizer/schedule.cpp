#include "mscot/quantizer/schedule.hpp"

#include <numeric>
#include <string>

#include "mscot/common/error.hpp"

namespace mscot::quantizer {

namespace {

void check_lengths(const std::vector<std::size_t>& lengths, const char* what) {
  if (lengths.empty()) throw ConfigError(std::string(what) + " schedule is empty");
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    if (lengths[k] == 0) throw ConfigError(std::string(what) + " schedule has a zero length");
    if (k > 0 && lengths[k] < lengths[k - 1])
      throw ConfigError(std::string(what) + " schedule must be non-decreasing");
  }
}

}  // namespace

ScaleSchedule ScaleSchedule::from_base(std::vector<std::size_t> lengths) {
  ScaleSchedule s;
  s.base = lengths;
  s.effective = std::move(lengths);
  s.validate();
  return s;
}

std::size_t ScaleSchedule::total_length() const {
  return std::accumulate(effective.begin(), effective.end(), std::size_t{0});
}

void ScaleSchedule::validate() const {
  check_lengths(base, "base");
  check_lengths(effective, "effective");
  if (base.size() != effective.size())
    throw ConfigError("base and effective schedules differ in scale count");
}

ScaleSchedule adapt_schedule(const ScaleSchedule& schedule, std::size_t target_len) {
  schedule.validate();
  if (target_len == 0) throw LengthError("target length must be positive");
  ScaleSchedule out;
  out.base = schedule.base;
  const std::size_t last = schedule.base.back();
  out.ratio = static_cast<double>(target_len) / static_cast<double>(last);
  out.effective.reserve(schedule.base.size());
  // Integer ceiling keeps the final length exact.
  for (std::size_t len : schedule.base) out.effective.push_back((target_len * len + last - 1) / last);
  return out;
}

}  // namespace mscot::quantizer
