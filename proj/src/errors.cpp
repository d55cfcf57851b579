// SPDX-License-Identifier: Apache-2.0
#include "bnrank/errors.hpp"

namespace bnrank {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_input: return "InvalidInput";
    case ErrorKind::degenerate_input: return "DegenerateInput";
    case ErrorKind::zero_row: return "ZeroRowError";
    case ErrorKind::precondition: return "PreconditionError";
    case ErrorKind::numerical_overflow: return "NumericalOverflow";
    case ErrorKind::degenerate_stats: return "DegenerateStats";
    case ErrorKind::step_size: return "StepSizeError";
    case ErrorKind::format: return "FormatError";
    case ErrorKind::invariant_violation: return "InvariantViolation";
  }
  return "Error";
}

}  // namespace bnrank
