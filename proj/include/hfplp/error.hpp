#pragma once

#include <stdexcept>
#include <string>

namespace hfplp {

// Base class for every workbench failure. `kind()` is a stable token used by
// the CLI when printing its single machine-parsable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define HFPLP_DEFINE_ERROR(Name)                                \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

HFPLP_DEFINE_ERROR(LinearSolveFailure)
HFPLP_DEFINE_ERROR(ShapeMismatch)
HFPLP_DEFINE_ERROR(NearSingularJacobian)
HFPLP_DEFINE_ERROR(NumericalBlowup)
HFPLP_DEFINE_ERROR(NonFiniteLoss)
HFPLP_DEFINE_ERROR(ChecksumMismatch)
HFPLP_DEFINE_ERROR(VersionMismatch)
HFPLP_DEFINE_ERROR(CorruptFile)
HFPLP_DEFINE_ERROR(ConfigError)
HFPLP_DEFINE_ERROR(IoError)
HFPLP_DEFINE_ERROR(MissingInput)

#undef HFPLP_DEFINE_ERROR

}  // namespace hfplp
