#pragma once

#include <stdexcept>
#include <string>

namespace mimic {

/// Base of every error thrown by the library. `kind()` is stable and is what
/// the command-line front end maps to exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { kDimension, kContract, kInput, kConfig, kData, kSampling, kIntegrity, kVersion, kNumeric };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

#define MIMIC_DEFINE_ERROR(Name, K)                                      \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(Kind::K, what) {}     \
  };

MIMIC_DEFINE_ERROR(DimensionError, kDimension)
MIMIC_DEFINE_ERROR(ContractError, kContract)
MIMIC_DEFINE_ERROR(InputError, kInput)
MIMIC_DEFINE_ERROR(ConfigError, kConfig)
MIMIC_DEFINE_ERROR(DataError, kData)
MIMIC_DEFINE_ERROR(SamplingError, kSampling)
MIMIC_DEFINE_ERROR(IntegrityError, kIntegrity)
MIMIC_DEFINE_ERROR(VersionError, kVersion)
MIMIC_DEFINE_ERROR(NumericError, kNumeric)

#undef MIMIC_DEFINE_ERROR

}  // namespace mimic
