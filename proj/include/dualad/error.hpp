#pragma once

#include <stdexcept>
#include <string>

namespace dualad {

/// Failure categories. Each maps onto a distinct CLI exit status.
enum class ErrorKind {
  config,       // malformed or missing configuration
  input,        // bad argument shape, missing file, unknown split
  layout,       // dataset directory does not follow the expected layout
  decode,       // image or artifact could not be parsed
  numeric,      // factorization failure, NaN/Inf, divergence
  calibration,  // degenerate validation statistics
  state,        // component used before it was calibrated or trained
  contract,     // caller violated a documented precondition
  evaluation,   // metric undefined for the given input
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

/// Process exit status for an error kind (0 is reserved for success).
int exit_code(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace dualad
