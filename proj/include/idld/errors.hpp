#pragma once

#include <stdexcept>
#include <string>

namespace idld {

// Caller broke a documented precondition (bad shape, index out of range, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid model / experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value showed up where a finite one was required.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string op, const std::string& what)
      : std::runtime_error(what + " (op: " + op + ")"), op_(std::move(op)) {}

  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

// Malformed external input (WAV files, manifests).
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace idld
