#pragma once

#include <span>
#include <vector>

#include "bdd/tensor.hpp"

namespace bdd {

/// Student and teacher logits for one batch. Classification uses [B,C];
/// dense prediction uses [B,C,H,W]. The teacher is held as a detached copy
/// so no loss can write a gradient into it.
class LogitBatch {
 public:
  LogitBatch(Tensor student, const Tensor& teacher);

  const Tensor& student() const { return student_; }
  const Tensor& teacher() const { return teacher_; }

 private:
  Tensor student_;
  Tensor teacher_;
};

/// Hyperparameters of the balanced forward/reverse KL objective.
struct DistillConfig {
  double alpha = 4.0;  // reverse-KL weight
  double beta = 1.0;   // weight of the distillation term in the overall loss
  double tau_f = 2.0;
  double tau_r = 8.0;
  std::vector<double> tau_set{1.0, 2.0, 4.0, 8.0};
  double epsilon = 1e-12;  // probability floor inside logarithms
  bool normalize_by_classes = false;
  bool tau_square_rescale = false;

  // Throws ParameterError when a field is out of range.
  void validate() const;

  static DistillConfig classification_defaults() { return {}; }
  static DistillConfig segmentation_defaults();
};

// Which distillation term overall_loss adds to cross-entropy.
enum class DistillTerm { kd, bdd, bdd_accumulated };

/// Mean over the batch of -log softmax(logits)[label]. Logits are [B,C];
/// labels must lie in [0, C).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean over rows of sum_c p (log p - log q) for probability tensors of equal
/// shape, with both logarithms floored at epsilon. Differentiating it with
/// respect to a probability leaf gives the partials in probability space.
Tensor kl_probabilities(const Tensor& p, const Tensor& q, double epsilon = 1e-12);

/// KL(p_T || p_S) at temperature tau, summed over the last axis and averaged
/// over the remaining ones. Probabilities are floored at epsilon only inside
/// the logarithms.
Tensor forward_kl(const LogitBatch& pair, double tau, double epsilon = 1e-12);

/// KL(p_S || p_T); same reduction and floor as forward_kl.
Tensor reverse_kl(const LogitBatch& pair, double tau, double epsilon = 1e-12);

/// forward_kl(tau_f) + alpha * reverse_kl(tau_r), with the optional 1/C and
/// tau^2 factors from the config.
Tensor bdd_loss(const LogitBatch& pair, const DistillConfig& cfg);

/// Uniform average over cfg.tau_set of the forward term plus alpha times the
/// uniform average of the reverse term.
Tensor bdd_loss_accumulated(const LogitBatch& pair, const DistillConfig& cfg);

/// Channel-wise variant for [B,C,H,W] logits: every (sample, channel) map is
/// flattened to H*W positions, softened across space, and the BDD terms are
/// averaged over channels and batch.
Tensor bdd_seg_loss(const LogitBatch& pair, const DistillConfig& cfg);

/// Classic Hinton-style distillation term: forward_kl at cfg.tau_f, with the
/// same optional factors bdd_loss would apply to its forward part.
Tensor kd_loss(const LogitBatch& pair, const DistillConfig& cfg);

/// cross_entropy(student, labels) + beta * distillation term. 4-D inputs use
/// per-pixel cross-entropy (labels [B,H,W]) and the channel-wise term, where
/// kd drops the reverse part and bdd_accumulated averages over tau_set.
Tensor overall_loss(const LogitBatch& pair, std::span<const int> labels, const DistillConfig& cfg,
                    DistillTerm term = DistillTerm::bdd);

}  // namespace bdd
