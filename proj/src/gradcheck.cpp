#include "bdd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "bdd/errors.hpp"

namespace bdd {

Tensor finite_difference_gradient(const ScalarFn& f, const Tensor& x, double h) {
  Tensor probe = x.detach();
  std::vector<double> g(x.numel());
  auto v = probe.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    v[i] = saved + h;
    const double up = f(probe);
    v[i] = saved - h;
    const double down = f(probe);
    v[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return Tensor::from(x.shape(), std::move(g));
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw DimensionError("relative_error: length mismatch");
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

GradCheckResult check_gradient(const std::function<Tensor(const Tensor&)>& graph_fn,
                               const Tensor& x, double tolerance, double h) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor loss = graph_fn(leaf);
  backward(loss);

  Tensor numeric = finite_difference_gradient(
      [&](const Tensor& p) { return graph_fn(p).item(); }, x, h);

  GradCheckResult r;
  r.relative_error = relative_error(leaf.grad(), numeric.values());
  for (std::size_t i = 0; i < numeric.numel(); ++i) {
    r.max_abs_error = std::max(r.max_abs_error, std::abs(leaf.grad()[i] - numeric[i]));
  }
  r.passed = std::isfinite(r.relative_error) && r.relative_error < tolerance;
  return r;
}

}  // namespace bdd
