#pragma once

#include "rdd/autodiff.hpp"
#include "rdd/gradcheck.hpp"
#include "rdd/random.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rdd::support {

/// Uniform entries in [lo, hi).
Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -2.0, double hi = 2.0);
LabelMap random_labels(Rng& rng, const Shape& shape, int num_classes);

struct GradCase {
  std::string name;
  /// Builds leaves and the scalar function for one random instance.
  std::function<std::pair<std::vector<Tensor>, ad::ScalarFunction>(Rng&)> make;
};

/// Every differentiable op and every composite loss.
std::vector<GradCase> gradient_cases();

struct GradCaseResult {
  std::string name;
  int instances = 0;
  int failures = 0;
  double worst_error = 0.0;
};

/// Runs each case on `instances` random draws with h = 1e-5, tol = 1e-4.
std::vector<GradCaseResult> run_gradient_suite(int instances, std::uint64_t seed = 2024);

}  // namespace rdd::support
