#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hks {

enum class ErrorKind {
  InvalidInput,
  Index,
  Shape,
  Format,
  Consistency,
  Io,
  Infeasible,
  EmptyShard,
  DegenerateInput,
  MissingSample,
  InsufficientData,
  StaleHierarchy,
  Mode,
  IncompatibleArchitecture,
  EmptyDataset,
  UndefinedMetric,
  Config,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Index: return "index";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Format: return "format";
    case ErrorKind::Consistency: return "consistency";
    case ErrorKind::Io: return "io";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::EmptyShard: return "empty-shard";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::MissingSample: return "missing-sample";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::StaleHierarchy: return "stale-hierarchy";
    case ErrorKind::Mode: return "mode";
    case ErrorKind::IncompatibleArchitecture: return "incompatible-architecture";
    case ErrorKind::EmptyDataset: return "empty-dataset";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

// Process exit code for a failure of this kind. Every kind maps to a distinct
// value; 1 is reserved for unexpected exceptions and 2 for usage errors.
inline int exit_code(ErrorKind k) { return 10 + static_cast<int>(k); }

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace hks
