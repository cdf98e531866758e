#include "bdd/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "bdd/gradcheck.hpp"
#include "bdd/ops.hpp"

namespace bdd {

namespace {

Tensor random_logits(Shape shape, std::mt19937_64& rng, double spread = 2.5) {
  std::normal_distribution<double> normal(0.0, spread);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

nlohmann::json dump(const Tensor& t) {
  return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

struct LossCase {
  std::string name;
  Shape shape;
  std::function<Tensor(const LogitBatch&)> loss;
};

std::vector<LossCase> gradcheck_cases() {
  DistillConfig paper;  // alpha 4, tau_f 2, tau_r 8
  const Shape cls{3, 10};
  return {
      {"forward_kl", cls, [](const LogitBatch& p) { return forward_kl(p, 2.0); }},
      {"reverse_kl", cls, [](const LogitBatch& p) { return reverse_kl(p, 8.0); }},
      {"bdd_loss", cls, [paper](const LogitBatch& p) { return bdd_loss(p, paper); }},
      {"bdd_loss_accumulated", cls,
       [paper](const LogitBatch& p) { return bdd_loss_accumulated(p, paper); }},
      {"bdd_seg_loss", {2, 4, 3, 3}, [paper](const LogitBatch& p) { return bdd_seg_loss(p, paper); }},
  };
}

PropertyResult check_below(std::string name, double measured, double threshold,
                           std::string detail = {}) {
  return {std::move(name), measured < threshold, measured, "<", threshold, std::move(detail)};
}

PropertyResult check_above(std::string name, double measured, double threshold,
                           std::string detail = {}) {
  return {std::move(name), measured > threshold, measured, ">", threshold, std::move(detail)};
}

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from({1, n}, std::move(v));
}

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json j = {{"loss", e.loss},
                        {"trials", e.trials},
                        {"max_relative_error", e.max_relative_error},
                        {"passed", e.passed}};
    if (!e.passed) j["offending_input"] = e.worst_input;
    losses.push_back(j);
  }
  return {{"tolerance", tolerance}, {"seed", seed}, {"passed", passed()}, {"losses", losses}};
}

GradcheckReport run_gradcheck_suite(const GradcheckOptions& opts) {
  GradcheckReport report;
  report.tolerance = opts.tolerance;
  report.seed = opts.seed;
  for (const auto& c : gradcheck_cases()) {
    std::mt19937_64 rng(opts.seed);
    GradcheckEntry entry;
    entry.loss = c.name;
    entry.trials = opts.trials;
    for (std::size_t t = 0; t < opts.trials; ++t) {
      const Tensor student = random_logits(c.shape, rng);
      const Tensor teacher = random_logits(c.shape, rng);

      Tensor leaf = student.detach();
      leaf.set_requires_grad(true);
      backward(c.loss(LogitBatch(leaf, teacher)));
      std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
      if (opts.corrupt_gradient)
        for (double& g : analytic) g *= 1.01;

      const Tensor numeric = finite_difference_gradient(
          [&](const Tensor& s) { return c.loss(LogitBatch(s, teacher)).item(); }, student,
          opts.step);
      const double err = relative_error(analytic, numeric.values());
      if (!std::isfinite(err) || err >= entry.max_relative_error) {
        entry.max_relative_error = std::isfinite(err) ? err : INFINITY;
        entry.worst_input = {{"trial", t}, {"student", dump(student)}, {"teacher", dump(teacher)}};
      }
    }
    entry.passed = entry.max_relative_error < opts.tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

bool PropertyReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

nlohmann::json PropertyReport::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : results) {
    list.push_back({{"name", r.name},
                    {"passed", r.passed},
                    {"measured", std::isfinite(r.measured) ? nlohmann::json(r.measured)
                                                           : nlohmann::json(nullptr)},
                    {"relation", r.relation},
                    {"threshold", r.threshold},
                    {"detail", r.detail}});
  }
  return {{"passed", passed()}, {"properties", list}};
}

double ZeroAvoidingProbe::logit_ratio() const {
  return std::abs(reverse_logit_grad) / std::abs(forward_logit_grad);
}

double ZeroAvoidingProbe::prob_ratio() const {
  return std::abs(reverse_prob_grad) / std::abs(forward_prob_grad);
}

ZeroAvoidingProbe zero_avoiding_probe(const std::vector<double>& teacher_logits,
                                      const std::vector<double>& student_logits, std::size_t cls,
                                      double tau, double epsilon) {
  ZeroAvoidingProbe probe;
  const Tensor teacher = row(teacher_logits);

  auto logit_grad = [&](bool forward) {
    Tensor s = row(student_logits);
    s.set_requires_grad(true);
    const LogitBatch pair(s, teacher);
    backward(forward ? forward_kl(pair, tau, epsilon) : reverse_kl(pair, tau, epsilon));
    return s.grad()[cls];
  };
  probe.forward_logit_grad = logit_grad(true);
  probe.reverse_logit_grad = logit_grad(false);

  // Same divergences with the student's probabilities as free variables.
  const Tensor p_teacher = softmax_tau(teacher, tau);
  const Tensor p_student_values = softmax_tau(row(student_logits), tau);
  auto prob_grad = [&](bool forward) {
    Tensor ps = p_student_values.detach();
    ps.set_requires_grad(true);
    backward(forward ? kl_probabilities(p_teacher, ps, epsilon)
                     : kl_probabilities(ps, p_teacher, epsilon));
    return ps.grad()[cls];
  };
  probe.forward_prob_grad = prob_grad(true);
  probe.reverse_prob_grad = prob_grad(false);
  probe.teacher_prob = p_teacher[cls];
  probe.student_prob = p_student_values[cls];
  return probe;
}

double seg_loss_channel_loop(const Tensor& student, const Tensor& teacher,
                             const DistillConfig& cfg) {
  const std::size_t b = student.extent(0), c = student.extent(1);
  const std::size_t cells = student.extent(2) * student.extent(3);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t off = (i * c + k) * cells;
      std::vector<double> s(student.values().begin() + off, student.values().begin() + off + cells);
      std::vector<double> t(teacher.values().begin() + off, teacher.values().begin() + off + cells);
      total += bdd_loss(LogitBatch(row(std::move(s)), row(std::move(t))), cfg).item();
    }
  }
  return total / static_cast<double>(b * c);
}

PropertyReport run_property_suite(const PropertyOptions& opts) {
  PropertyReport report;
  std::mt19937_64 rng(opts.seed);
  const double eps = opts.epsilon;

  // Gibbs' inequality on random pairs.
  {
    double lowest = INFINITY;
    for (int i = 0; i < 1000; ++i) {
      const Tensor s = random_logits({1, 10}, rng, 4.0);
      const Tensor t = random_logits({1, 10}, rng, 4.0);
      const LogitBatch pair(s, t);
      const double tau = std::uniform_real_distribution<double>(0.5, 8.0)(rng);
      lowest = std::min({lowest, forward_kl(pair, tau, eps).item(), reverse_kl(pair, tau, eps).item()});
    }
    report.results.push_back(
        check_above("nonnegativity", lowest, -1e-10, "min KL over 1000 random pairs, both directions"));
  }

  // KL(p || p) = 0.
  {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Tensor z = random_logits({4, 10}, rng, 4.0);
      const LogitBatch pair(z.detach(), z);
      worst = std::max({worst, std::abs(forward_kl(pair, 1.0, eps).item()),
                        std::abs(reverse_kl(pair, 1.0, eps).item())});
    }
    report.results.push_back(check_below("identity", worst, 1e-12, "max |KL(p||p)|"));
  }

  // Forward/reverse differ on the reference pair.
  {
    const LogitBatch pair(row({0.0, 0.0}), row({2.0, 0.0}));
    const double gap = std::abs(forward_kl(pair, 1.0, eps).item() - reverse_kl(pair, 1.0, eps).item());
    report.results.push_back(
        check_above("asymmetry", gap, 0.1, "|forward - reverse| for teacher [2,0], student [0,0]"));
  }

  // Probability-space partials on a near-zero teacher class.
  {
    const auto probe = zero_avoiding_probe({0.0, 0.0, -20.0}, {0.0, 0.0, 0.0}, 2, 1.0, eps);
    report.results.push_back(check_above(
        "zero_avoiding_ratio", probe.prob_ratio(), 1e3,
        "|dKL_r/dp_S| / |dKL_f/dp_S| on class 2, teacher [0,0,-20], student [0,0,0]"));
    const double bound = probe.teacher_prob / probe.student_prob;
    report.results.push_back(check_below(
        "zero_avoiding_forward_vanishes", std::abs(probe.forward_prob_grad) - bound, 1e-15,
        "|dKL_f/dp_S(2)| - p_T(2)/p_S(2)"));
  }

  // The floor keeps both divergences finite when a teacher probability underflows to 0.
  {
    const Tensor t = row({0.0, 0.0, -800.0});
    Tensor s = row({0.5, -0.5, 1.0});
    s.set_requires_grad(true);
    const LogitBatch pair(s, t);
    const Tensor f = forward_kl(pair, 1.0, eps);
    const Tensor r = reverse_kl(pair, 1.0, eps);
    backward(add(f, r));
    const bool finite = std::isfinite(f.item()) && std::isfinite(r.item()) && all_finite(s.grad());
    report.results.push_back({"log_domain_guard", finite, finite ? 1.0 : 0.0, "==", 1.0,
                              "loss and gradient finite with teacher logit -800"});
  }

  // Channel-wise loss agrees with the per-channel loop.
  {
    DistillConfig cfg;
    cfg.epsilon = eps > 0.0 ? eps : 1e-12;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Tensor s = random_logits({2, 4, 3, 3}, rng);
      const Tensor t = random_logits({2, 4, 3, 3}, rng);
      const double fused = bdd_seg_loss(LogitBatch(s, t), cfg).item();
      worst = std::max(worst, std::abs(fused - seg_loss_channel_loop(s, t, cfg)));
    }
    report.results.push_back(check_below("channel_wise_equivalence", worst, 1e-10,
                                         "max |bdd_seg_loss - loop oracle| on [2,4,3,3]"));
  }

  // Composition: bdd_loss == forward(tau_f) + alpha * reverse(tau_r), exactly.
  {
    double worst = 0.0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
      DistillConfig cfg;
      cfg.alpha = 8.0 * unit(rng);
      cfg.tau_f = 0.5 + 8.0 * unit(rng);
      cfg.tau_r = 0.5 + 8.0 * unit(rng);
      const LogitBatch pair(random_logits({4, 10}, rng), random_logits({4, 10}, rng));
      const double composed = forward_kl(pair, cfg.tau_f, cfg.epsilon).item() +
                              cfg.alpha * reverse_kl(pair, cfg.tau_r, cfg.epsilon).item();
      worst = std::max(worst, std::abs(bdd_loss(pair, cfg).item() - composed));
    }
    report.results.push_back({"composition_identity", worst == 0.0, worst, "==", 0.0,
                              "bdd_loss - (KL_f + alpha KL_r), 100 random configs"});
  }

  // Softmax rows lie on the simplex; argmax ignores temperature.
  {
    double worst_sum = 0.0;
    bool interior = true;
    std::size_t argmax_violations = 0;
    for (int i = 0; i < 200; ++i) {
      const Tensor z = random_logits({1, 10}, rng, 3.0);
      const auto base = std::max_element(z.values().begin(), z.values().end()) - z.values().begin();
      for (double tau : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 100.0}) {
        const Tensor p = softmax_tau(z, tau);
        double total = 0.0;
        for (double v : p.values()) {
          total += v;
          interior = interior && v > 0.0 && v < 1.0;
        }
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        const auto arg = std::max_element(p.values().begin(), p.values().end()) - p.values().begin();
        argmax_violations += arg != base;
      }
    }
    report.results.push_back(check_below("softmax_simplex", interior ? worst_sum : INFINITY, 1e-12,
                                         "max |row sum - 1|, entries in (0,1)"));
    report.results.push_back(check_below("argmax_temperature_invariance",
                                         static_cast<double>(argmax_violations), 0.5,
                                         "argmax changes across tau in {0.25..100}"));
  }

  // Teacher tensors never receive gradient.
  {
    Tensor t = random_logits({2, 4, 3, 3}, rng);
    Tensor s = random_logits({2, 4, 3, 3}, rng);
    s.set_requires_grad(true);
    DistillConfig cfg;
    const std::vector<int> labels(2 * 3 * 3, 1);
    backward(overall_loss(LogitBatch(s, t), labels, cfg));
    report.results.push_back({"teacher_opacity", !t.has_grad(), t.has_grad() ? 1.0 : 0.0, "==", 0.0,
                              "teacher grad absent after backward"});
  }

  // Higher temperature softens the reference pair.
  {
    const LogitBatch pair(row({0.0, 0.0}), row({2.0, 0.0}));
    const double drop = forward_kl(pair, 1.0, eps).item() - forward_kl(pair, 2.0, eps).item();
    report.results.push_back(
        check_above("temperature_softening", drop, 0.0, "KL_f(tau=1) - KL_f(tau=2)"));
  }

  // Two evaluations from the same seed are bit-identical.
  {
    auto run = [&] {
      std::mt19937_64 local(opts.seed + 17);
      Tensor s = random_logits({8, 10}, local);
      const Tensor t = random_logits({8, 10}, local);
      s.set_requires_grad(true);
      const Tensor loss = bdd_loss_accumulated(LogitBatch(s, t), DistillConfig{});
      backward(loss);
      std::vector<double> out(s.grad().begin(), s.grad().end());
      out.push_back(loss.item());
      return out;
    };
    const auto a = run(), b = run();
    const bool same = std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    report.results.push_back({"determinism", same, same ? 0.0 : 1.0, "==", 0.0,
                              "loss and gradient bytes across two runs"});
  }
  return report;
}

}  // namespace bdd
