#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace phijack {

// Failure categories. The CLI maps these onto process exit codes, so the
// set is part of the tool contract, not just internal bookkeeping.
enum class ErrorKind {
  Usage,        // bad config / bad arguments
  Shape,        // dimension mismatch between tensors or rasters
  Placement,    // patch rectangle outside image bounds
  Sizing,       // degenerate patch geometry
  Domain,       // empty index set, empty mask, value out of admissible range
  State,        // required record (attention, history) missing
  Vocabulary,   // unknown concept string
  Capability,   // operation not supported by the graph engine
  Numeric,      // non-finite value produced during forward/backward
  Integrity,    // checksum or manifest mismatch
  Training,     // convergence gate not met
  Io,           // file read/write failure
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Placement: return "placement";
    case ErrorKind::Sizing: return "sizing";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::State: return "state";
    case ErrorKind::Vocabulary: return "vocabulary";
    case ErrorKind::Capability: return "capability";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::Training: return "training";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

inline constexpr const char* kVersionString = "phijack-0.1.0";

}  // namespace phijack
