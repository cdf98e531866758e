#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bdd/errors.hpp"
#include "bdd/gradcheck.hpp"
#include "bdd/ops.hpp"
#include "bdd/optim.hpp"
#include "bdd/tensor.hpp"

using namespace bdd;

namespace {

Tensor leaf(Shape s, std::vector<double> v) { return Tensor::from(std::move(s), std::move(v), true); }

std::vector<double> as_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(s));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(s), std::move(v));
}

}  // namespace

TEST(Tensor, ShapeMatchesValueCount) {
  EXPECT_THROW(Tensor::from({2, 3}, {1, 2, 3}), DimensionError);
  const Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, ItemRequiresScalar) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::zeros({2}).item(), ContractError);
}

TEST(Affine, IdentityWeights) {
  const Tensor y = affine(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 2}, {1, 0, 0, 1}),
                          Tensor::from({2}, {0, 0}));
  EXPECT_EQ(as_vec(y.values()), (std::vector<double>{1, 2}));
}

TEST(Affine, ZeroWeightsPassBias) {
  const Tensor y = affine(Tensor::from({1, 2}, {1, 2}), Tensor::zeros({2, 2}), Tensor::from({2}, {3, 4}));
  EXPECT_EQ(as_vec(y.values()), (std::vector<double>{3, 4}));
}

TEST(Affine, HandProduct) {
  const Tensor y = affine(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 2}, {1, 1, 1, 1}),
                          Tensor::from({2}, {0, 1}));
  EXPECT_EQ(as_vec(y.values()), (std::vector<double>{3, 4}));
}

TEST(Affine, MismatchNamesBothShapes) {
  try {
    affine(Tensor::zeros({1, 3}), Tensor::zeros({2, 2}), Tensor::zeros({2}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,2]"), std::string::npos) << msg;
  }
}

TEST(Relu, Values) {
  EXPECT_EQ(as_vec(relu(Tensor::from({3}, {-1, 0, 2})).values()), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(as_vec(relu(Tensor::from({2}, {-5.5, 3.25})).values()),
            (std::vector<double>{0, 3.25}));
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Tensor x = leaf({1}, {0.0});
  backward(sum(relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Softmax, ReferenceValues) {
  const Tensor a = softmax_tau(Tensor::from({1, 2}, {0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  // e^2 / (e^2 + 1) and e / (e + 1).
  const Tensor b = softmax_tau(Tensor::from({1, 2}, {2, 0}), 1.0);
  EXPECT_NEAR(b[0], 0.8807970779778823, 1e-15);
  EXPECT_NEAR(b[1], 0.11920292202211755, 1e-15);
  const Tensor c = softmax_tau(Tensor::from({1, 2}, {2, 0}), 2.0);
  EXPECT_NEAR(c[0], 0.7310585786300049, 1e-15);
  EXPECT_NEAR(c[1], 0.2689414213699951, 1e-15);
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  const Tensor z = Tensor::zeros({1, 3});
  EXPECT_THROW(softmax_tau(z, 0.0), ParameterError);
  EXPECT_THROW(softmax_tau(z, -1.0), ParameterError);
  EXPECT_THROW(log_softmax_tau(z, 0.0), ParameterError);
}

TEST(Softmax, NoOverflowForLargeLogits) {
  const double tau = 0.5;
  const Tensor p = softmax_tau(Tensor::from({1, 3}, {700 * tau, -700 * tau, 0}), tau);
  for (double v : p.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
}

TEST(Softmax, SimplexAndArgmaxInvariance) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z = random_tensor({4, 7}, rng, -6, 6);
    for (double tau : {0.3, 1.0, 4.0, 50.0}) {
      const Tensor p = softmax_tau(z, tau);
      for (std::size_t r = 0; r < 4; ++r) {
        double total = 0;
        std::size_t zarg = 0, parg = 0;
        for (std::size_t c = 0; c < 7; ++c) {
          const double v = p[r * 7 + c];
          EXPECT_GT(v, 0.0);
          EXPECT_LT(v, 1.0);
          total += v;
          if (z[r * 7 + c] > z[r * 7 + zarg]) zarg = c;
          if (v > p[r * 7 + parg]) parg = c;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
        EXPECT_EQ(zarg, parg);
      }
    }
  }
}

TEST(Softmax, AxisArgumentSoftensAlongThatAxis) {
  const Tensor z = Tensor::from({2, 2}, {2, 0, 0, 0});
  const Tensor p = softmax_tau(z, 1.0, 0);
  EXPECT_NEAR(p[0], 0.8807970779778823, 1e-15);
  EXPECT_NEAR(p[2], 0.11920292202211755, 1e-15);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = leaf({3}, {1, 2, 3});
  backward(sum(x));
  EXPECT_EQ(as_vec(x.grad()), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, Square) {
  Tensor x = leaf({1}, {2});
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = leaf({2}, {1, 2});
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, LeafGradientsAccumulate) {
  Tensor x = leaf({1}, {3});
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 2.0)));
  EXPECT_EQ(x.grad()[0], 4.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tensor x = leaf({2}, {1, 2});
  const Tensor c = Tensor::from({2}, {3, 4});
  backward(sum(mul(x, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_EQ(as_vec(x.grad()), (std::vector<double>{3, 4}));
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  Tensor x = leaf({1}, {3});
  const Tensor y = scale(x, 2.0);
  backward(sum(add(y, y)));  // d(4x)/dx
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(ComputeGraph, InputsPrecedeOutputs) {
  Tensor x = leaf({2, 3}, {1, -2, 3, 0.5, 2, -1});
  Tensor w = leaf({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::zeros({2});
  const Tensor loss = sum(relu(affine(x, w, b)));
  const ComputeGraph g = ComputeGraph::trace(loss);
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (const auto& in : g.nodes()[i]->inputs) {
      EXPECT_LT(g.position(Tensor(in)), i);
    }
  }
  EXPECT_EQ(g.position(loss), g.size() - 1);
}

TEST(ComputeGraph, DetachCutsTheGraph) {
  Tensor x = leaf({1}, {2});
  Tensor d = scale(x, 3.0).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_TRUE(d.is_leaf());
}

TEST(FiniteDifference, SumIsAllOnes) {
  const Tensor g = finite_difference_gradient(
      [](const Tensor& t) {
        double s = 0;
        for (double v : t.values()) s += v;
        return s;
      },
      Tensor::from({3}, {0.3, -1, 7}));
  for (double v : g.values()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDifference, Square) {
  const Tensor g = finite_difference_gradient([](const Tensor& t) { return t[0] * t[0]; },
                                              Tensor::from({1}, {3}), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDifference, RelativeErrorConventions) {
  const std::vector<double> zero{0, 0}, a{1, 0}, b{1, 0}, c{0, 1};
  EXPECT_EQ(relative_error(zero, zero), 0.0);
  EXPECT_EQ(relative_error(a, b), 0.0);
  EXPECT_NEAR(relative_error(a, c), std::sqrt(2.0) / 2.0, 1e-15);
}

// Every differentiable op against central differences at 50 random points.
TEST(GradCheck, AllOps) {
  std::mt19937_64 rng(11);
  const Tensor w = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4}, rng);
  const Tensor other = random_tensor({2, 3}, rng);
  const Tensor weights = random_tensor({2, 3}, rng);

  const std::vector<std::pair<std::string, std::function<Tensor(const Tensor&)>>> cases{
      {"affine_x", [&](const Tensor& x) { return sum(mul(affine(x, w, b), affine(x, w, b))); }},
      {"affine_w",
       [&](const Tensor& x) {
         return sum(mul(affine(other, reshape(x, {3, 2}), Tensor::zeros({2})), Tensor::full({2, 2}, 0.7)));
       }},
      {"softmax", [&](const Tensor& x) { return sum(mul(softmax_tau(x, 1.7), weights)); }},
      {"softmax_axis0", [&](const Tensor& x) { return sum(mul(softmax_tau(x, 0.8, 0), weights)); }},
      {"log_softmax", [&](const Tensor& x) { return sum(mul(log_softmax_tau(x, 2.5), weights)); }},
      {"sub_mul", [&](const Tensor& x) { return sum(mul(sub(x, other), x)); }},
      {"log_clamped", [&](const Tensor& x) { return sum(mul(log_clamped(add(x, Tensor::full({2, 3}, 3.0)), 1e-12), weights)); }},
      {"sum_last", [&](const Tensor& x) { return sum(mul(sum_last(x), sum_last(x))); }},
      {"permute", [&](const Tensor& x) { return sum(mul(permute(x, {1, 0}), reshape(weights, {3, 2}))); }},
      {"relu", [&](const Tensor& x) { return sum(mul(relu(x), weights)); }},
  };
  for (const auto& [name, fn] : cases) {
    for (int trial = 0; trial < 50; ++trial) {
      Tensor x = name == "affine_w" ? random_tensor({6}, rng) : random_tensor({2, 3}, rng);
      if (name == "relu") {
        // Keep away from the kink.
        for (double& v : x.mutable_values())
          if (std::abs(v) < 1e-3) v = 0.5;
      }
      if (name == "log_clamped") x = random_tensor({2, 3}, rng, -1.0, 1.0);
      const GradCheckResult r = check_gradient(fn, x, 1e-6);
      EXPECT_TRUE(r.passed) << name << " rel err " << r.relative_error;
    }
  }
}

TEST(Sgd, PlainStep) {
  Tensor p = leaf({1}, {1.0});
  backward(sum(p));
  Sgd opt({p}, 0.1, 0.0);
  opt.step();
  EXPECT_DOUBLE_EQ(p[0], 0.9);
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Sgd, MomentumRecurrence) {
  Tensor p = leaf({1}, {0.0});
  Sgd opt({p}, 0.1, 0.9);
  backward(sum(p));
  opt.step();
  EXPECT_NEAR(p[0], -0.1, 1e-15);
  backward(sum(p));
  opt.step();
  EXPECT_NEAR(p[0], -0.29, 1e-15);
}

TEST(Sgd, ZeroLearningRateLeavesParams) {
  Tensor p = leaf({2}, {1.5, -2.0});
  backward(sum(mul(p, p)));
  Sgd opt({p}, 0.0, 0.9);
  opt.step();
  EXPECT_EQ(as_vec(p.values()), (std::vector<double>{1.5, -2.0}));
}

TEST(Sgd, MissingGradientIsContractError) {
  Tensor p = leaf({1}, {1.0});
  Sgd opt({p}, 0.1);
  EXPECT_THROW(opt.step(), ContractError);
}

TEST(Sgd, RejectsBadHyperparameters) {
  Tensor p = leaf({1}, {1.0});
  EXPECT_THROW(Sgd({p}, -0.1), ParameterError);
  EXPECT_THROW(Sgd({p}, 0.1, 1.0), ParameterError);
}

TEST(Determinism, RepeatedGraphsAreBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(5);
    Tensor x = random_tensor({3, 5}, rng);
    x.set_requires_grad(true);
    const Tensor w = random_tensor({5, 4}, rng);
    backward(sum(log_softmax_tau(relu(affine(x, w, Tensor::zeros({4}))), 1.3)));
    return as_vec(x.grad());
  };
  EXPECT_EQ(run(), run());
}
