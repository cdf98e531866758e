#include "bdd/losses.hpp"

#include <cmath>
#include <string>

#include "bdd/errors.hpp"
#include "bdd/ops.hpp"

namespace bdd {

namespace {

std::size_t rows_of(const Tensor& logits) {
  const std::size_t c = logits.shape().back();
  return c == 0 ? 0 : logits.numel() / c;
}

enum class Direction { forward, reverse };

Tensor kl_divergence(const LogitBatch& pair, double tau, double epsilon, Direction dir) {
  const Tensor p_student = softmax_tau(pair.student(), tau);
  const Tensor p_teacher = softmax_tau(pair.teacher(), tau);
  return dir == Direction::forward ? kl_probabilities(p_teacher, p_student, epsilon)
                                   : kl_probabilities(p_student, p_teacher, epsilon);
}

// Applies the optional 1/C and tau^2 factors to a single divergence term.
Tensor adjust(Tensor term, double tau, std::size_t classes, const DistillConfig& cfg) {
  if (cfg.normalize_by_classes) term = scale(term, 1.0 / static_cast<double>(classes));
  if (cfg.tau_square_rescale) term = scale(term, tau * tau);
  return term;
}

std::size_t class_axis_length(const LogitBatch& pair) { return pair.student().shape().back(); }

// [B,C,H,W] -> [B*C, H*W]: each row is one channel's spatial map.
LogitBatch channel_rows(const LogitBatch& pair) {
  const Shape& s = pair.student().shape();
  const Shape rows{s[0] * s[1], s[2] * s[3]};
  return LogitBatch(reshape(pair.student(), rows), reshape(pair.teacher(), rows));
}

void require_4d(const LogitBatch& pair) {
  if (pair.student().dim() != 4) {
    throw DimensionError("channel-wise loss expects [B,C,H,W] logits, got " +
                         shape_to_string(pair.student().shape()));
  }
}

}  // namespace

LogitBatch::LogitBatch(Tensor student, const Tensor& teacher)
    : student_(std::move(student)), teacher_(teacher.requires_grad() ? teacher.detach() : teacher) {
  if (student_.shape() != teacher_.shape()) {
    throw DimensionError("LogitBatch: student " + shape_to_string(student_.shape()) +
                         " vs teacher " + shape_to_string(teacher_.shape()));
  }
  if (student_.dim() == 0 || student_.shape().back() == 0) {
    throw DimensionError("LogitBatch: empty class axis");
  }
}

void DistillConfig::validate() const {
  auto fail = [](const std::string& what) { throw ParameterError("DistillConfig: " + what); };
  if (!(alpha >= 0.0)) fail("alpha must be >= 0");
  if (!(beta >= 0.0)) fail("beta must be >= 0");
  if (!(tau_f > 0.0)) fail("tau_f must be > 0");
  if (!(tau_r > 0.0)) fail("tau_r must be > 0");
  if (tau_set.empty()) fail("tau_set must be nonempty");
  for (double t : tau_set)
    if (!(t > 0.0)) fail("tau_set entries must be > 0");
  if (!(epsilon > 0.0 && epsilon <= 1e-6)) fail("epsilon must be in (0, 1e-6]");
}

DistillConfig DistillConfig::segmentation_defaults() {
  DistillConfig cfg;
  cfg.beta = 3.0;
  return cfg;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.dim() != 2) {
    throw DimensionError("cross_entropy expects [B,C] logits, got " +
                         shape_to_string(logits.shape()));
  }
  const std::size_t batch = logits.extent(0), classes = logits.extent(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                       std::to_string(classes) + ")");
    }
  }
  const Tensor log_p = log_softmax_tau(logits, 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) total -= log_p[i * classes + labels[i]];
  const double inv_b = 1.0 / static_cast<double>(batch);
  std::vector<int> picked(labels.begin(), labels.end());
  return detail::make_op(
      "cross_entropy", {1}, {total * inv_b}, {logits},
      [log_p, picked = std::move(picked), classes, inv_b](detail::Node& self) {
        detail::Node& zn = *self.inputs[0];
        zn.ensure_grad();
        const double g = self.grad[0] * inv_b;
        for (std::size_t i = 0; i < picked.size(); ++i) {
          for (std::size_t c = 0; c < classes; ++c) {
            const double p = std::exp(log_p[i * classes + c]);
            zn.grad[i * classes + c] += g * (p - (static_cast<int>(c) == picked[i] ? 1.0 : 0.0));
          }
        }
      });
}

Tensor kl_probabilities(const Tensor& p, const Tensor& q, double epsilon) {
  if (epsilon < 0.0) throw ParameterError("kl: epsilon must be nonnegative");
  if (p.shape() != q.shape()) {
    throw DimensionError("kl: " + shape_to_string(p.shape()) + " vs " + shape_to_string(q.shape()));
  }
  const Tensor pointwise = mul(p, sub(log_clamped(p, epsilon), log_clamped(q, epsilon)));
  return scale(sum(pointwise), 1.0 / static_cast<double>(rows_of(p)));
}

Tensor forward_kl(const LogitBatch& pair, double tau, double epsilon) {
  return kl_divergence(pair, tau, epsilon, Direction::forward);
}

Tensor reverse_kl(const LogitBatch& pair, double tau, double epsilon) {
  return kl_divergence(pair, tau, epsilon, Direction::reverse);
}

Tensor bdd_loss(const LogitBatch& pair, const DistillConfig& cfg) {
  cfg.validate();
  const std::size_t classes = class_axis_length(pair);
  Tensor fwd = adjust(forward_kl(pair, cfg.tau_f, cfg.epsilon), cfg.tau_f, classes, cfg);
  Tensor rev = adjust(reverse_kl(pair, cfg.tau_r, cfg.epsilon), cfg.tau_r, classes, cfg);
  return add(fwd, scale(rev, cfg.alpha));
}

Tensor bdd_loss_accumulated(const LogitBatch& pair, const DistillConfig& cfg) {
  cfg.validate();
  const std::size_t classes = class_axis_length(pair);
  const double inv_n = 1.0 / static_cast<double>(cfg.tau_set.size());
  Tensor fwd, rev;
  for (std::size_t i = 0; i < cfg.tau_set.size(); ++i) {
    const double tau = cfg.tau_set[i];
    Tensor f = adjust(forward_kl(pair, tau, cfg.epsilon), tau, classes, cfg);
    Tensor r = adjust(reverse_kl(pair, tau, cfg.epsilon), tau, classes, cfg);
    fwd = i == 0 ? f : add(fwd, f);
    rev = i == 0 ? r : add(rev, r);
  }
  return add(scale(fwd, inv_n), scale(scale(rev, inv_n), cfg.alpha));
}

Tensor bdd_seg_loss(const LogitBatch& pair, const DistillConfig& cfg) {
  require_4d(pair);
  return bdd_loss(channel_rows(pair), cfg);
}

Tensor kd_loss(const LogitBatch& pair, const DistillConfig& cfg) {
  cfg.validate();
  return adjust(forward_kl(pair, cfg.tau_f, cfg.epsilon), cfg.tau_f, class_axis_length(pair), cfg);
}

Tensor overall_loss(const LogitBatch& pair, std::span<const int> labels, const DistillConfig& cfg,
                    DistillTerm term) {
  if (pair.student().dim() == 4) {
    const Shape& s = pair.student().shape();
    // Per-pixel logits [B*H*W, C] for the supervised term.
    const Tensor cells = reshape(permute(pair.student(), {0, 2, 3, 1}), {s[0] * s[2] * s[3], s[1]});
    Tensor distill;
    if (term == DistillTerm::kd) {
      DistillConfig forward_only = cfg;
      forward_only.alpha = 0.0;
      distill = bdd_seg_loss(pair, forward_only);
    } else if (term == DistillTerm::bdd) {
      distill = bdd_seg_loss(pair, cfg);
    } else {
      require_4d(pair);
      distill = bdd_loss_accumulated(channel_rows(pair), cfg);
    }
    return add(cross_entropy(cells, labels), scale(distill, cfg.beta));
  }
  Tensor distill;
  switch (term) {
    case DistillTerm::kd:
      distill = kd_loss(pair, cfg);
      break;
    case DistillTerm::bdd:
      distill = bdd_loss(pair, cfg);
      break;
    case DistillTerm::bdd_accumulated:
      distill = bdd_loss_accumulated(pair, cfg);
      break;
  }
  return add(cross_entropy(pair.student(), labels), scale(distill, cfg.beta));
}

}  // namespace bdd
