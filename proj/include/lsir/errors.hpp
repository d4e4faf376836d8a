#pragma once

#include <stdexcept>
#include <string>

namespace lsir {

// Base class for everything this library throws on its own behalf.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A regularized linear system could not be solved to the required residual
// accuracy (rank deficiency, non-finite entries, ...).
struct SingularSystem : Error {
  using Error::Error;
};

// Fewer samples than an estimator needs (e.g. cross-validation folds would
// be empty).
struct InsufficientData : Error {
  using Error::Error;
};

// A kernel or basis width that must be positive came out zero, negative or
// non-finite.
struct DegenerateWidth : Error {
  using Error::Error;
};

// An objective or gradient evaluated to NaN/Inf.
struct NonFiniteEvaluation : Error {
  using Error::Error;
};

// A column required by name or index is absent from the input table.
struct MissingColumn : Error {
  using Error::Error;
};

// A coordinate has zero variance, so it cannot be standardized.
struct ZeroVariance : Error {
  using Error::Error;
};

// Unrecognized synthetic-family or engine name.
struct UnknownFamily : Error {
  using Error::Error;
};

// A configuration value violates its documented constraints (empty grid,
// too few folds, ...).
struct InvalidConfig : Error {
  using Error::Error;
};

// Malformed cell in a CSV input; carries the 1-based line number and the
// column role ("x" or "y") for diagnostics.
struct ParseError : Error {
  ParseError(long line, std::string column, const std::string& what)
      : Error("line " + std::to_string(line) + ", column " + column + ": " + what),
        line(line),
        column(std::move(column)) {}

  long line;
  std::string column;
};

}  // namespace lsir
