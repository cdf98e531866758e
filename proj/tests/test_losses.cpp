#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bdd/checks.hpp"
#include "bdd/errors.hpp"
#include "bdd/gradcheck.hpp"
#include "bdd/losses.hpp"
#include "bdd/ops.hpp"

using namespace bdd;

namespace {

// Direct-summation references for teacher [2,0], student [0,0]:
//   p_T(tau=1) = (e^2, 1)/(e^2+1), p_T(tau=2) = (e, 1)/(e+1), p_S = (1/2, 1/2).
constexpr double kForwardTau1 = 0.32781332547273756;
constexpr double kForwardTau2 = 0.11094407167172737;
constexpr double kReverseTau1 = 0.4337808304830273;
constexpr double kLn2 = 0.6931471805599453;

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from({1, n}, std::move(v));
}

LogitBatch reference_pair() { return LogitBatch(row({0, 0}), row({2, 0})); }

DistillConfig plain(double alpha, double tau_f, double tau_r) {
  DistillConfig c;
  c.alpha = alpha;
  c.tau_f = tau_f;
  c.tau_r = tau_r;
  return c;
}

Tensor random_logits(Shape s, std::mt19937_64& rng, double spread = 3.0) {
  std::normal_distribution<double> n(0.0, spread);
  std::vector<double> v(shape_numel(s));
  for (double& x : v) x = n(rng);
  return Tensor::from(std::move(s), std::move(v));
}

}  // namespace

TEST(ReferenceOracle, ClosedFormsAgreeWithFrozenConstants) {
  const double e2 = std::exp(2.0), e1 = std::exp(1.0);
  const double pt0 = e2 / (e2 + 1), pt1 = 1 / (e2 + 1);
  EXPECT_NEAR(pt0 * std::log(2 * pt0) + pt1 * std::log(2 * pt1), kForwardTau1, 1e-15);
  EXPECT_NEAR(-0.5 * std::log(2 * pt0) - 0.5 * std::log(2 * pt1), kReverseTau1, 1e-15);
  const double qt0 = e1 / (e1 + 1), qt1 = 1 / (e1 + 1);
  EXPECT_NEAR(qt0 * std::log(2 * qt0) + qt1 * std::log(2 * qt1), kForwardTau2, 1e-15);
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(row({0, 0}), std::vector<int>{0}).item(), kLn2, 1e-15);
  EXPECT_NEAR(cross_entropy(row({2, 0}), std::vector<int>{0}).item(), 0.12692801104297263, 1e-15);
  EXPECT_NEAR(cross_entropy(row({2, 0}), std::vector<int>{1}).item(), 2.1269280110429727, 1e-15);
}

TEST(CrossEntropy, LabelOutOfRange) {
  EXPECT_THROW(cross_entropy(row({0, 0}), std::vector<int>{2}), IndexError);
  EXPECT_THROW(cross_entropy(row({0, 0}), std::vector<int>{-1}), IndexError);
  EXPECT_THROW(cross_entropy(row({0, 0}), std::vector<int>{0, 1}), DimensionError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const std::vector<int> labels{0, 3, 2, 4};
  for (int i = 0; i < 20; ++i) {
    const auto r = check_gradient([&](const Tensor& z) { return cross_entropy(z, labels); },
                                  random_logits({4, 5}, rng));
    EXPECT_TRUE(r.passed) << r.relative_error;
  }
}

TEST(ForwardKl, Examples) {
  EXPECT_EQ(forward_kl(LogitBatch(row({1, 1}), row({1, 1})), 1.0).item(), 0.0);
  EXPECT_NEAR(forward_kl(reference_pair(), 1.0).item(), kForwardTau1, 1e-15);
  EXPECT_NEAR(forward_kl(reference_pair(), 2.0).item(), kForwardTau2, 1e-15);
}

TEST(ReverseKl, Examples) {
  EXPECT_EQ(reverse_kl(LogitBatch(row({1, 1}), row({1, 1})), 1.0).item(), 0.0);
  EXPECT_NEAR(reverse_kl(reference_pair(), 1.0).item(), kReverseTau1, 1e-15);
  // Swapping roles mirrors the forward example.
  EXPECT_NEAR(reverse_kl(LogitBatch(row({2, 0}), row({0, 0})), 1.0).item(), kForwardTau1, 1e-15);
}

TEST(Divergences, ShapeMismatch) {
  EXPECT_THROW(LogitBatch(row({0, 0}), row({0, 0, 0})), DimensionError);
}

TEST(Divergences, BatchMeanOfRowSums) {
  const LogitBatch two(Tensor::from({2, 2}, {0, 0, 0, 0}), Tensor::from({2, 2}, {2, 0, 0, 0}));
  EXPECT_NEAR(forward_kl(two, 1.0).item(), kForwardTau1 / 2.0, 1e-15);
}

TEST(Divergences, NonnegativeAndZeroOnIdentity) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Tensor s = random_logits({1, 6}, rng), t = random_logits({1, 6}, rng);
    EXPECT_GE(forward_kl(LogitBatch(s, t), 1.5).item(), -1e-10);
    EXPECT_GE(reverse_kl(LogitBatch(s, t), 1.5).item(), -1e-10);
  }
  for (int i = 0; i < 50; ++i) {
    const Tensor z = random_logits({3, 6}, rng);
    EXPECT_LT(std::abs(forward_kl(LogitBatch(z.clone(), z), 1.0).item()), 1e-12);
    EXPECT_LT(std::abs(reverse_kl(LogitBatch(z.clone(), z), 1.0).item()), 1e-12);
  }
}

TEST(Divergences, AsymmetryWitness) {
  EXPECT_GT(std::abs(forward_kl(reference_pair(), 1.0).item() -
                     reverse_kl(reference_pair(), 1.0).item()),
            0.1);
}

TEST(Divergences, TemperatureSoftens) {
  EXPECT_LT(forward_kl(reference_pair(), 2.0).item(), forward_kl(reference_pair(), 1.0).item());
}

TEST(Divergences, FloorKeepsUnderflowFinite) {
  Tensor s = row({0.2, -0.3, 1.0});
  s.set_requires_grad(true);
  const LogitBatch pair(s, row({0, 0, -800}));
  const Tensor loss = add(forward_kl(pair, 1.0), reverse_kl(pair, 1.0));
  backward(loss);
  EXPECT_TRUE(std::isfinite(loss.item()));
  for (double g : s.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Divergences, TeacherNeverReceivesGradient) {
  std::mt19937_64 rng(4);
  Tensor s = random_logits({2, 5}, rng);
  s.set_requires_grad(true);
  Tensor t = random_logits({2, 5}, rng);
  t.set_requires_grad(true);  // even a trainable teacher is detached
  const LogitBatch pair(s, t);
  backward(add(bdd_loss(pair, DistillConfig{}), bdd_loss_accumulated(pair, DistillConfig{})));
  EXPECT_FALSE(t.has_grad());
  EXPECT_TRUE(s.has_grad());
}

TEST(ZeroAvoiding, LogitSpaceGradientsHaveClosedForms) {
  // d KL_f / dz_S = (p_S - p_T)/tau; at p_S = 1/3 and p_T(2) ~ 1e-9 this is ~1/3.
  const auto probe = zero_avoiding_probe({0, 0, -20}, {0, 0, 0}, 2);
  const double pt2 = 1.0 / (1.0 + 2.0 * std::exp(20.0));
  EXPECT_NEAR(probe.teacher_prob, pt2, 1e-22);
  EXPECT_NEAR(probe.forward_logit_grad, 1.0 / 3.0 - pt2, 1e-14);
  EXPECT_NEAR(probe.reverse_logit_grad, 4.444444444, 1e-8);
  EXPECT_GT(std::abs(probe.reverse_logit_grad), 1e-2);
}

TEST(ZeroAvoiding, ProbabilitySpaceRatio) {
  const auto probe = zero_avoiding_probe({0, 0, -20}, {0, 0, 0}, 2);
  // dKL_f/dp_S(2) = -p_T(2)/p_S(2) vanishes with the teacher probability.
  EXPECT_NEAR(probe.forward_prob_grad, -probe.teacher_prob / probe.student_prob, 1e-20);
  EXPECT_GT(probe.prob_ratio(), 1e3);
}

TEST(BddLoss, Examples) {
  const LogitBatch pair = reference_pair();
  EXPECT_NEAR(bdd_loss(pair, plain(1, 1, 1)).item(), 0.7615941559557649, 1e-15);
  EXPECT_NEAR(bdd_loss(pair, plain(4, 1, 1)).item(), 2.0629366474048467, 1e-14);
  EXPECT_EQ(bdd_loss(LogitBatch(row({3, 1, 0}), row({3, 1, 0})), DistillConfig{}).item(), 0.0);
}

TEST(BddLoss, CompositionIsExact) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 8.0);
  for (int i = 0; i < 100; ++i) {
    const DistillConfig c = plain(u(rng), u(rng), u(rng));
    const LogitBatch pair(random_logits({3, 7}, rng), random_logits({3, 7}, rng));
    EXPECT_EQ(bdd_loss(pair, c).item(),
              forward_kl(pair, c.tau_f).item() + c.alpha * reverse_kl(pair, c.tau_r).item());
  }
}

TEST(BddLoss, NormalizationAndRescaleFlags) {
  const LogitBatch pair = reference_pair();
  DistillConfig c = plain(1, 2, 1);
  c.normalize_by_classes = true;
  EXPECT_NEAR(bdd_loss(pair, c).item(), (kForwardTau2 + kReverseTau1) / 2.0, 1e-15);
  c.normalize_by_classes = false;
  c.tau_square_rescale = true;
  EXPECT_NEAR(bdd_loss(pair, c).item(), 4.0 * kForwardTau2 + kReverseTau1, 1e-14);
}

TEST(BddLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    const Tensor t = random_logits({2, 10}, rng);
    const auto r = check_gradient(
        [&](const Tensor& s) { return bdd_loss(LogitBatch(s, t), DistillConfig{}); },
        random_logits({2, 10}, rng));
    EXPECT_TRUE(r.passed) << r.relative_error;
  }
}

TEST(DistillConfig, Validation) {
  EXPECT_NO_THROW(DistillConfig{}.validate());
  auto bad = [](auto mutate) {
    DistillConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ParameterError);
  };
  bad([](DistillConfig& c) { c.alpha = -1; });
  bad([](DistillConfig& c) { c.beta = -1; });
  bad([](DistillConfig& c) { c.tau_f = 0; });
  bad([](DistillConfig& c) { c.tau_r = -2; });
  bad([](DistillConfig& c) { c.tau_set.clear(); });
  bad([](DistillConfig& c) { c.tau_set = {1, 0}; });
  bad([](DistillConfig& c) { c.epsilon = 0; });
  bad([](DistillConfig& c) { c.epsilon = 1e-5; });
  EXPECT_EQ(DistillConfig::segmentation_defaults().beta, 3.0);
  const DistillConfig d;
  EXPECT_EQ(d.alpha, 4.0);
  EXPECT_EQ(d.tau_f, 2.0);
  EXPECT_EQ(d.tau_r, 8.0);
  EXPECT_EQ(d.beta, 1.0);
}

TEST(Accumulated, SingleTemperatureMatchesBdd) {
  std::mt19937_64 rng(7);
  const LogitBatch pair(random_logits({3, 5}, rng), random_logits({3, 5}, rng));
  DistillConfig c = plain(2.5, 3.0, 3.0);
  c.tau_set = {3.0};
  EXPECT_NEAR(bdd_loss_accumulated(pair, c).item(), bdd_loss(pair, c).item(), 1e-15);
}

TEST(Accumulated, MeanOverTemperatures) {
  DistillConfig c = plain(0, 1, 1);
  c.tau_set = {1, 2};
  EXPECT_NEAR(bdd_loss_accumulated(reference_pair(), c).item(), 0.21937869857223247, 1e-15);
  c.tau_set.clear();
  EXPECT_THROW(bdd_loss_accumulated(reference_pair(), c), ParameterError);
}

TEST(Accumulated, ZeroOnIdentity) {
  const Tensor z = Tensor::from({2, 3}, {1, 2, 3, -1, 0, 4});
  EXPECT_EQ(bdd_loss_accumulated(LogitBatch(z.clone(), z), DistillConfig{}).item(), 0.0);
}

TEST(SegLoss, SingleChannelReducesToClassificationOracle) {
  const LogitBatch pair(Tensor::from({1, 1, 1, 2}, {0, 0}), Tensor::from({1, 1, 1, 2}, {2, 0}));
  EXPECT_NEAR(bdd_seg_loss(pair, plain(1, 1, 1)).item(), 0.7615941559557649, 1e-15);
}

TEST(SegLoss, RequiresFourDimensions) {
  EXPECT_THROW(bdd_seg_loss(reference_pair(), DistillConfig{}), DimensionError);
}

TEST(SegLoss, ZeroOnIdentityAndMatchesLoop) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const Tensor s = random_logits({2, 4, 3, 3}, rng), t = random_logits({2, 4, 3, 3}, rng);
    EXPECT_NEAR(bdd_seg_loss(LogitBatch(s, t), DistillConfig{}).item(),
                seg_loss_channel_loop(s, t, DistillConfig{}), 1e-10);
    EXPECT_EQ(bdd_seg_loss(LogitBatch(t.clone(), t), DistillConfig{}).item(), 0.0);
  }
}

TEST(OverallLoss, ReferenceSum) {
  EXPECT_NEAR(overall_loss(reference_pair(), std::vector<int>{0}, plain(1, 1, 1)).item(),
              1.4547413365157102, 1e-14);
}

TEST(OverallLoss, BetaZeroIsCrossEntropy) {
  std::mt19937_64 rng(9);
  const LogitBatch pair(random_logits({4, 6}, rng), random_logits({4, 6}, rng));
  const std::vector<int> labels{1, 0, 5, 2};
  DistillConfig c;
  c.beta = 0;
  EXPECT_EQ(overall_loss(pair, labels, c).item(), cross_entropy(pair.student(), labels).item());
}

TEST(OverallLoss, AlphaZeroIsClassicKd) {
  std::mt19937_64 rng(10);
  const LogitBatch pair(random_logits({4, 6}, rng), random_logits({4, 6}, rng));
  const std::vector<int> labels{1, 0, 5, 2};
  const DistillConfig c = plain(0, 4, 4);
  const double kd = cross_entropy(pair.student(), labels).item() + forward_kl(pair, 4).item();
  EXPECT_NEAR(overall_loss(pair, labels, c).item(), kd, 1e-15);
  EXPECT_NEAR(overall_loss(pair, labels, c, DistillTerm::kd).item(), kd, 1e-15);
}

TEST(OverallLoss, DenseInputsUsePerCellCrossEntropy) {
  std::mt19937_64 rng(12);
  const Tensor s = random_logits({2, 3, 2, 2}, rng), t = random_logits({2, 3, 2, 2}, rng);
  std::vector<int> labels(8);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
  // Build [B*H*W, C] by hand.
  std::vector<double> cells;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t hw = 0; hw < 4; ++hw)
      for (std::size_t c = 0; c < 3; ++c) cells.push_back(s[(b * 3 + c) * 4 + hw]);
  const double ce = cross_entropy(Tensor::from({8, 3}, cells), labels).item();
  DistillConfig cfg = DistillConfig::segmentation_defaults();
  const double seg = bdd_seg_loss(LogitBatch(s, t), cfg).item();
  EXPECT_NEAR(overall_loss(LogitBatch(s, t), labels, cfg).item(), ce + 3.0 * seg, 1e-13);

  const auto r = check_gradient(
      [&](const Tensor& x) { return overall_loss(LogitBatch(x, t), labels, cfg); }, s);
  EXPECT_TRUE(r.passed) << r.relative_error;
}

TEST(Validation, LossesRejectInvalidConfigs) {
  DistillConfig c;
  c.alpha = -1;
  EXPECT_THROW(bdd_loss(reference_pair(), c), ParameterError);
  c = DistillConfig{};
  c.tau_f = 0;
  EXPECT_THROW(kd_loss(reference_pair(), c), ParameterError);
  c = DistillConfig{};
  c.epsilon = 0;
  EXPECT_THROW(bdd_loss_accumulated(reference_pair(), c), ParameterError);
  const int labels[] = {0};
  c = DistillConfig{};
  c.beta = -2;
  EXPECT_THROW(overall_loss(reference_pair(), labels, c), ParameterError);
}
