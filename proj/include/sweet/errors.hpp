#pragma once

#include <stdexcept>
#include <string>

namespace sweet {

// Dimension mismatch between tables that must share (H, S, A) or row shapes.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Scalar argument outside its documented range.
struct ParameterError : std::invalid_argument {
  explicit ParameterError(const std::string& what) : std::invalid_argument(what) {}
};

// A documented caller obligation does not hold (e.g. infeasible baseline).
struct PreconditionError : std::runtime_error {
  explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

// Every model in a class assigns zero likelihood to some observed transition.
struct DegenerateDataError : std::runtime_error {
  explicit DegenerateDataError(const std::string& what) : std::runtime_error(what) {}
};

// Instance generation exhausted its resampling budget.
struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed artifact or config file; message carries file and line.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failure (non-SPD matrix, condition number overflow, ...).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sweet
