// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared across the toolkit. Each class carries the process
// exit code the CLI maps it to: 1 usage, 2 format, 3 integrity, 4 numeric.
#pragma once

#include <stdexcept>
#include <string>

namespace vbp {

class Error : public std::runtime_error {
 public:
  Error(const std::string& msg, int exit_code)
      : std::runtime_error(msg), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

// Bad arguments, impossible requests, preconditions violated by the caller.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg, 1) {}
};

// Tensor/shape contract violations. Messages name the offending shapes.
class DimensionError : public UsageError {
 public:
  explicit DimensionError(const std::string& msg) : UsageError(msg) {}
};

// Invalid pruning plans (out-of-range or duplicate indices).
class PlanError : public UsageError {
 public:
  explicit PlanError(const std::string& msg) : UsageError(msg) {}
};

// Variance is undefined below two samples.
class InsufficientSamplesError : public UsageError {
 public:
  explicit InsufficientSamplesError(const std::string& msg) : UsageError(msg) {}
};

// Malformed files. Subclasses keep the failure modes distinguishable.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg, 2) {}
};

class MagicError : public FormatError {
 public:
  explicit MagicError(const std::string& msg) : FormatError(msg) {}
};

class TruncatedError : public FormatError {
 public:
  explicit TruncatedError(const std::string& msg) : FormatError(msg) {}
};

class ManifestError : public FormatError {
 public:
  explicit ManifestError(const std::string& msg) : FormatError(msg) {}
};

// Cross-artifact mismatches: fingerprint chains, missing weights, tap abuse.
class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& msg) : Error(msg, 3) {}
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg, 4) {}
};

}  // namespace vbp
