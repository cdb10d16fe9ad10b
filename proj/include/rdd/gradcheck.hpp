#pragma once

#include "rdd/autodiff.hpp"

#include <functional>
#include <span>
#include <vector>

namespace rdd::ad {

struct GradCheckReport {
  /// Per leaf: max over elements of |analytic - numeric| / max(1, |numeric|).
  std::vector<double> leaf_errors;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

using ScalarFunction = std::function<Var(std::span<const Var>)>;

/// Compares backward() against central differences with step `h` on every
/// element of every leaf. `f` must be deterministic and return a scalar.
GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor> leaves, double h = 1e-5,
                           double tol = 1e-4);

}  // namespace rdd::ad
