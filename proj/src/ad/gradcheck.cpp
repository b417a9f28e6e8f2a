#include "salign/ad/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "salign/error.hpp"

namespace salign::ad {

double evaluate(const ScalarFunction& f, const Tensor& point) {
  Tape tape;
  Var x = tape.leaf(point);
  return f(tape, x).value().item();
}

GradCheckReport finite_difference_report(const ScalarFunction& f, const Tensor& point,
                                         double epsilon) {
  if (!(epsilon > 0.0)) throw ContractError("finite_difference_check: epsilon must be positive");

  const double first = evaluate(f, point);
  const double second = evaluate(f, point);
  if (first != second) {
    throw OracleInvalid("finite_difference_check: function is not deterministic");
  }

  GradCheckReport r;
  {
    Tape tape;
    Var x = tape.leaf(point);
    Var y = f(tape, x);
    const Var leaves[] = {x};
    r.analytic = backward(tape, y, leaves)[x];
  }
  r.numeric = Tensor(point.shape());
  Tensor probe = point;
  double max_diff = 0.0, max_mag = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    probe[i] = orig + epsilon;
    const double up = evaluate(f, probe);
    probe[i] = orig - epsilon;
    const double down = evaluate(f, probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = r.analytic[i];
    r.numeric[i] = numeric;
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    r.max_coordinate_error = std::max(r.max_coordinate_error, std::abs(a - numeric) / denom);
    max_diff = std::max(max_diff, std::abs(a - numeric));
    max_mag = std::max({max_mag, std::abs(a), std::abs(numeric)});
  }
  r.relative_error = max_diff / std::max(max_mag, 1e-8);
  return r;
}

double finite_difference_check(const ScalarFunction& f, const Tensor& point, double epsilon) {
  return finite_difference_report(f, point, epsilon).max_coordinate_error;
}

}  // namespace salign::ad
