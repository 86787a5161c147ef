#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace splitconf {

// An argument violated a documented precondition (non-finite score,
// level outside (0,1), dimension mismatch, ...).
class invalid_input_error : public std::invalid_argument {
 public:
  explicit invalid_input_error(const std::string& msg)
      : std::invalid_argument(msg) {}
};

// A level correction pushed the fitted alpha outside (0,1).  Carries the
// smallest calibration size for which the requested correction is feasible.
class infeasible_correction_error : public std::runtime_error {
 public:
  infeasible_correction_error(const std::string& msg, std::size_t minimal_n)
      : std::runtime_error(msg), minimal_n(minimal_n) {}
  std::size_t minimal_n;
};

// The pinball objective is bounded below by zero for alpha in (0,1), so a
// well-posed fit can never be unbounded; this exists for API completeness
// and fires only on internal breakdown.
class unbounded_problem_error : public std::runtime_error {
 public:
  explicit unbounded_problem_error(const std::string& msg)
      : std::runtime_error(msg) {}
};

// Operation not defined for this rule kind (e.g. width of a static rule).
class unsupported_error : public std::runtime_error {
 public:
  explicit unsupported_error(const std::string& msg)
      : std::runtime_error(msg) {}
};

// Post-solve validation of the fit's dual structure failed.
class solver_error : public std::runtime_error {
 public:
  explicit solver_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace splitconf
