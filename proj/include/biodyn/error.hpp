#pragma once

#include <stdexcept>
#include <string>

namespace biodyn {

/// Coarse classification of failures; the CLI maps each class to an exit code.
enum class ErrorClass {
  Shape,       // dimension mismatch between objects
  Format,      // malformed file or wire data
  Consistency, // inputs disagree with each other (e.g. header counts)
  Io,          // filesystem / network
  Config,      // bad user configuration
  Numeric,     // degenerate statistics, non-convergence, ill-conditioning
  Precondition // caller violated an operation's precondition
};

inline const char* to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::Shape: return "shape";
    case ErrorClass::Format: return "format";
    case ErrorClass::Consistency: return "consistency";
    case ErrorClass::Io: return "io";
    case ErrorClass::Config: return "config";
    case ErrorClass::Numeric: return "numeric";
    case ErrorClass::Precondition: return "precondition";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(std::string(to_string(cls)) + " error: " + what), cls_(cls) {}

  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

inline void require(bool cond, ErrorClass cls, const std::string& what) {
  if (!cond) throw Error(cls, what);
}

}  // namespace biodyn
