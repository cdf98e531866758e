#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdd/losses.hpp"
#include "bdd/mlp.hpp"
#include "bdd/synth_data.hpp"

namespace bdd {

enum class LossMode { ce, kd, bdd, bdd_accum, bdd_seg };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;  // batch order
  MLPSpec teacher;
  MLPSpec student;
  LossMode mode = LossMode::bdd;
  DistillConfig distill;
  double kd_tau = 4.0;  // temperature of the classic KD baseline

  void validate() const;
  // DistillConfig actually used for this mode: kd swaps in kd_tau and drops
  // the reverse term, ce zeroes alpha and beta.
  DistillConfig effective_distill() const;
};

nlohmann::json to_json(const MLPSpec& spec);
nlohmann::json to_json(const DistillConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;    // mean training objective over the epoch's batches
  double train_metric = 0.0;  // top-1 or mIoU after the epoch
  double val_loss = 0.0;      // cross-entropy on the validation split
  double val_metric = 0.0;
};

struct MetricsReport {
  std::string role;    // "teacher" or "student"
  std::string metric;  // "top1" or "miou"
  LossMode mode = LossMode::ce;
  std::uint64_t seed = 0;
  double initial_train_loss = 0.0;  // objective before the first step
  double initial_train_ce = 0.0;
  std::vector<EpochRecord> epochs;
  double final_train_loss = 0.0;
  double final_train_metric = 0.0;
  double final_val_metric = 0.0;
  std::string init_fingerprint;   // FNV-1a of the initial parameters
  std::string split_fingerprint;  // FNV-1a of the training split
  double wall_time_s = 0.0;
  nlohmann::json config;

  nlohmann::json to_json(bool include_timing = true) const;
};

struct TrainedModel {
  ModelParams params;
  MetricsReport report;
};

/// Cross-entropy training of cfg.teacher. The returned params are frozen.
TrainedModel train_teacher(const TrainConfig& cfg, const ClassificationDataset& train,
                           const ClassificationDataset& val);
TrainedModel train_teacher(const TrainConfig& cfg, const SegmentationGridDataset& train,
                           const SegmentationGridDataset& val);

/// Trains cfg.student under cfg.mode. For every mode except ce the frozen
/// teacher's logits are computed per batch without a graph and combined
/// with the student's through overall_loss.
TrainedModel distill_student(const TrainConfig& cfg, const ModelParams& teacher,
                             const ClassificationDataset& train, const ClassificationDataset& val);
TrainedModel distill_student(const TrainConfig& cfg, const ModelParams& teacher,
                             const SegmentationGridDataset& train,
                             const SegmentationGridDataset& val);

// Logits with no graph attached.
Tensor predict_logits(const ModelParams& params, const Tensor& x);

std::vector<int> argmax_rows(const Tensor& logits);
// Ties go to the lowest class index.
double top1_from_logits(const Tensor& logits, std::span<const int> labels);

/// Per-class IoU = TP / (TP + FP + FN) over the whole split; classes absent
/// from both prediction and truth are left out of the mean.
double miou_from_predictions(std::span<const int> predicted, std::span<const int> truth,
                             std::size_t classes);

double evaluate_top1(const ModelParams& params, const ClassificationDataset& data);
double evaluate_miou(const ModelParams& params, const SegmentationGridDataset& data);

/// Softened (tau) probabilities binned over [0,1], split into the
/// ground-truth class ("positive") and all other classes ("negative").
struct ProbabilityHistogram {
  double tau = 4.0;
  std::size_t bins = 64;
  std::vector<std::uint64_t> teacher_positive, teacher_negative;
  std::vector<std::uint64_t> student_positive, student_negative;

  // Copy with every bin capped at the second-largest count of its series,
  // so the dominant bar does not hide the small-probability bins.
  ProbabilityHistogram clipped() const;
  nlohmann::json to_json() const;
};

ProbabilityHistogram probability_histograms(const ModelParams& teacher, const ModelParams& student,
                                            const ClassificationDataset& data, double tau = 4.0,
                                            std::size_t bins = 64);

std::string fingerprint(std::span<const double> values);
std::string fingerprint(const ModelParams& params);

}  // namespace bdd
