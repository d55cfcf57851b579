// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace bnrank {

enum class ErrorKind {
  invalid_input,
  degenerate_input,
  zero_row,
  precondition,
  numerical_overflow,
  degenerate_stats,
  step_size,
  format,
  invariant_violation,
};

const char* to_string(ErrorKind kind) noexcept;

/// Base for every error raised by the library. The kind mirrors the
/// error names used throughout the docs (InvalidInput, ZeroRowError, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error(ErrorKind::invalid_input, what) {}
};

class DegenerateInput : public Error {
 public:
  explicit DegenerateInput(const std::string& what) : Error(ErrorKind::degenerate_input, what) {}
};

/// A BN row with zero second moment: the unit's activation collapsed entirely.
class ZeroRowError : public Error {
 public:
  ZeroRowError(const std::string& what, long row)
      : Error(ErrorKind::zero_row, what + " (row " + std::to_string(row) + ")"), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error(ErrorKind::precondition, what) {}
};

class NumericalOverflow : public Error {
 public:
  explicit NumericalOverflow(const std::string& what) : Error(ErrorKind::numerical_overflow, what) {}
};

class DegenerateStats : public Error {
 public:
  explicit DegenerateStats(const std::string& what) : Error(ErrorKind::degenerate_stats, what) {}
};

class StepSizeError : public Error {
 public:
  explicit StepSizeError(const std::string& what) : Error(ErrorKind::step_size, what) {}
};

/// Malformed file. `offset` is a byte offset for binary formats and a
/// 1-based line number for text formats.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::optional<std::uint64_t> offset = std::nullopt)
      : Error(ErrorKind::format,
              offset ? what + " at offset " + std::to_string(*offset) : what),
        offset_(offset) {}
  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  std::optional<std::uint64_t> offset_;
};

/// A runtime invariant (unit diagonal, |M_ij| <= 1, ...) failed during a run.
class InvariantViolation : public Error {
 public:
  explicit InvariantViolation(const std::string& what) : Error(ErrorKind::invariant_violation, what) {}
};

}  // namespace bnrank
