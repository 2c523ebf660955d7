#pragma once

#include <stdexcept>
#include <string>

namespace dc3 {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to an op's contract.
struct ShapeError : Error {
  using Error::Error;
};

// A computation produced NaN/Inf, or received non-finite input.
struct NumericError : Error {
  using Error::Error;
};

// An API precondition was violated (non-scalar backward root, batch of 1
// in train mode, unconverged completion trace, ...).
struct ContractError : Error {
  using Error::Error;
};

// Problem-family generation failed (e.g. no nonsingular column block).
struct GenerationError : Error {
  using Error::Error;
};

// Equality completion could not be solved.
struct CompletionError : Error {
  using Error::Error;
};

// Text input (case file, config, dataset header) could not be parsed.
struct ParseError : Error {
  using Error::Error;
};

// File payload truncated, wrong version, or shape mismatch on load.
struct IoError : Error {
  using Error::Error;
};

// Training diverged or too many batch elements were rejected.
struct TrainingError : Error {
  using Error::Error;
};

// Reference solver could not produce a solution.
struct SolverError : Error {
  using Error::Error;
};

}  // namespace dc3
