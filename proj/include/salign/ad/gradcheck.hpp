#pragma once

#include <functional>

#include "salign/ad/tape.hpp"

namespace salign::ad {

/// Builds a scalar on `tape` from the leaf `x`.
using ScalarFunction = std::function<Var(Tape& tape, Var x)>;

/// Compares the reverse-mode gradient of `f` at `point` against central
/// differences with step `epsilon`. Returns the largest per-coordinate
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// Throws OracleInvalid when two evaluations at `point` disagree and
/// ContractError when epsilon is not positive.
double finite_difference_check(const ScalarFunction& f, const Tensor& point, double epsilon);

struct GradCheckReport {
  /// Largest per-coordinate error, as returned by finite_difference_check.
  double max_coordinate_error = 0.0;
  /// max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8).
  double relative_error = 0.0;
  Tensor analytic;
  Tensor numeric;
};

GradCheckReport finite_difference_report(const ScalarFunction& f, const Tensor& point,
                                         double epsilon);

/// Forward value of `f` at `point` on a fresh tape.
double evaluate(const ScalarFunction& f, const Tensor& point);

}  // namespace salign::ad
