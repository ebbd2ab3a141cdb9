#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dereverb {

enum class ErrorKind {
  InvalidInput,
  Configuration,
  DegenerateInput,
  Infeasible,
  MeasurementUndefined,
  SingularBeamformer,
  Contract,
  ExternalEnhancer,
  Io,
  Pipeline,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::MeasurementUndefined: return "measurement-undefined";
    case ErrorKind::SingularBeamformer: return "singular-beamformer";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::ExternalEnhancer: return "external-enhancer";
    case ErrorKind::Io: return "io";
    case ErrorKind::Pipeline: return "pipeline";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` tells callers what failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace detail

}  // namespace dereverb
