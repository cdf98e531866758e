#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdd/losses.hpp"

namespace bdd {

// ---------------------------------------------------------------------------
// Gradient checks: backward() against central finite differences.

struct GradcheckEntry {
  std::string loss;
  std::size_t trials = 0;
  double max_relative_error = 0.0;
  bool passed = false;
  nlohmann::json worst_input;  // logits of the worst trial
};

struct GradcheckReport {
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
  std::vector<GradcheckEntry> entries;

  bool passed() const;
  nlohmann::json to_json() const;
};

struct GradcheckOptions {
  std::size_t trials = 50;
  std::uint64_t seed = 0;
  double tolerance = 1e-6;
  double step = 1e-5;
  // Fault injection: scales every analytic gradient by 1.01 before comparing.
  bool corrupt_gradient = false;
};

/// Checks d/d(student logits) of forward_kl, reverse_kl, bdd_loss
/// (alpha 4, tau_f 2, tau_r 8), bdd_loss_accumulated and bdd_seg_loss on
/// seeded random inputs: [3,10] logits for classification, [2,4,3,3] for
/// the channel-wise loss.
GradcheckReport run_gradcheck_suite(const GradcheckOptions& opts = {});

// ---------------------------------------------------------------------------
// Invariant suite.

struct PropertyResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  std::string relation;  // e.g. "<", ">"
  double threshold = 0.0;
  std::string detail;
};

struct PropertyReport {
  std::vector<PropertyResult> results;

  bool passed() const;
  nlohmann::json to_json() const;
};

struct PropertyOptions {
  std::uint64_t seed = 0;
  // Fault injection: probability floor used by the divergence checks.
  double epsilon = 1e-12;
};

PropertyReport run_property_suite(const PropertyOptions& opts = {});

// ---------------------------------------------------------------------------
// Diagnostics shared with the tests and the acceptance suite.

/// Gradients of forward and reverse KL on one class, both with respect to
/// the student logit and with respect to the student probability.
struct ZeroAvoidingProbe {
  double teacher_prob = 0.0;
  double student_prob = 0.0;
  double forward_logit_grad = 0.0;
  double reverse_logit_grad = 0.0;
  double forward_prob_grad = 0.0;
  double reverse_prob_grad = 0.0;

  double logit_ratio() const;
  double prob_ratio() const;
};

ZeroAvoidingProbe zero_avoiding_probe(const std::vector<double>& teacher_logits,
                                      const std::vector<double>& student_logits,
                                      std::size_t cls, double tau = 1.0, double epsilon = 1e-12);

/// Channel-wise loss evaluated one (sample, channel) slice at a time with
/// bdd_loss on the flattened spatial vector, then averaged.
double seg_loss_channel_loop(const Tensor& student, const Tensor& teacher,
                             const DistillConfig& cfg);

}  // namespace bdd
