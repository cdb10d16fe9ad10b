#include "rdd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rdd::ad {

namespace {

double evaluate_constant(const ScalarFunction& f, const std::vector<Var>& leaves) {
  NoGradGuard guard;
  const Var y = f(leaves);
  if (y.size() != 1) throw ShapeError("grad_check: function returned shape " + to_string(y.shape()));
  return y.item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor> leaves, double h, double tol) {
  if (!(h > 0.0 && h <= 1e-2)) throw std::invalid_argument("grad_check: step h must lie in (0, 1e-2]");

  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (auto& t : leaves) vars.push_back(parameter(std::move(t)));

  reset_tape();
  const Var y = f(vars);
  if (y.size() != 1) {
    reset_tape();
    throw ShapeError("grad_check: function must return a scalar, got shape " + to_string(y.shape()));
  }
  if (y.is_leaf()) {
    throw TapeError("grad_check: function output does not depend on any leaf");
  }
  backward(y);

  GradCheckReport report;
  report.tolerance = tol;
  for (auto& v : vars) {
    const Tensor analytic = v.has_grad() ? v.grad() : Tensor(v.shape(), 0.0);
    double worst = 0.0;
    Tensor& x = v.leaf_value();
    for (Index i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double up = evaluate_constant(f, vars);
      x[i] = saved - h;
      const double down = evaluate_constant(f, vars);
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, std::isnan(err) ? INFINITY : err);
    }
    report.leaf_errors.push_back(worst);
    report.max_error = std::max(report.max_error, worst);
  }
  report.passed = report.max_error <= tol;
  return report;
}

}  // namespace rdd::ad
