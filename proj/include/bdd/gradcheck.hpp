#pragma once

#include <functional>
#include <span>

#include "bdd/tensor.hpp"

namespace bdd {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate of x. `x` is evaluated through a perturbed copy; the caller's
/// tensor is left untouched.
Tensor finite_difference_gradient(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// ||a - b|| / (||a|| + ||b||), 0 when both vectors vanish.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

struct GradCheckResult {
  double relative_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

/// Compares backward() of `graph_fn` at x against finite differences.
/// graph_fn must build a scalar graph from a leaf that requires grad.
GradCheckResult check_gradient(const std::function<Tensor(const Tensor&)>& graph_fn,
                               const Tensor& x, double tolerance = 1e-6, double h = 1e-5);

}  // namespace bdd
