#pragma once

#include <stdexcept>
#include <string>

namespace mscot {

// Base of every library error. `kind()` is a stable machine-readable class
// name; the CLI maps it onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MSCOT_DEFINE_ERROR(Name, tag)                        \
  class Name : public Error {                                \
   public:                                                   \
    explicit Name(const std::string& message)                \
        : Error(tag, message) {}                             \
  };

MSCOT_DEFINE_ERROR(ShapeError, "shape")
MSCOT_DEFINE_ERROR(LengthError, "length")
MSCOT_DEFINE_ERROR(ConfigError, "config")
MSCOT_DEFINE_ERROR(NumericError, "numeric")
MSCOT_DEFINE_ERROR(ContractViolation, "contract")
MSCOT_DEFINE_ERROR(StaleTapeError, "stale_tape")
MSCOT_DEFINE_ERROR(DegenerateMaskError, "degenerate_mask")
MSCOT_DEFINE_ERROR(UnderflowError, "underflow")
MSCOT_DEFINE_ERROR(CostGuardError, "cost_guard")
MSCOT_DEFINE_ERROR(FormatError, "format")
MSCOT_DEFINE_ERROR(IoError, "io")
MSCOT_DEFINE_ERROR(FreezeViolation, "freeze")

#undef MSCOT_DEFINE_ERROR

}  // namespace mscot
