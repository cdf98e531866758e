#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdd/train.hpp"

namespace bdd {

struct SweepVariant {
  std::string name;
  LossMode mode = LossMode::bdd;
  DistillConfig distill;
};

struct SweepRow {
  std::uint64_t seed = 0;
  std::size_t variant = 0;  // index into SweepTable::variants
  MetricsReport report;
};

struct VariantSummary {
  std::string name;
  std::size_t runs = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
};

struct PairedDelta {
  std::uint64_t seed = 0;
  double baseline = 0.0;
  double candidate = 0.0;
  double delta = 0.0;
};

/// Results ordered seed-major, then by variant, independent of scheduling.
struct SweepTable {
  std::vector<SweepVariant> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepRow> rows;

  const SweepRow& at(std::uint64_t seed, const std::string& variant) const;
  std::vector<VariantSummary> summaries() const;
  std::vector<PairedDelta> paired_deltas(const std::string& baseline,
                                         const std::string& candidate) const;

  // Columns: seed,mode,alpha,tau_f,tau_r,beta,final_top1_or_miou,wall_time_s
  std::string to_csv(bool include_timing = true) const;
  // Columns: variant,mode,alpha,tau_f,tau_r,beta,runs,mean,std
  std::string summary_csv() const;
};

std::string paired_delta_csv(const std::vector<PairedDelta>& deltas);

/// Threads used by sweeps: BDD_THREADS when set and positive, else 1.
std::size_t sweep_threads_from_env();

/// Runs every (seed, variant) pair. Within one seed all variants share the
/// data split, the batch order and the student's initial parameters: the
/// seed is written into both cfg.seed and cfg.student.seed.
SweepTable run_seed_sweep(const TrainConfig& cfg, const ModelParams& teacher,
                          const ClassificationDataset& train, const ClassificationDataset& val,
                          const std::vector<std::uint64_t>& seeds,
                          const std::vector<SweepVariant>& variants, std::size_t threads = 1);
SweepTable run_seed_sweep(const TrainConfig& cfg, const ModelParams& teacher,
                          const SegmentationGridDataset& train, const SegmentationGridDataset& val,
                          const std::vector<std::uint64_t>& seeds,
                          const std::vector<SweepVariant>& variants, std::size_t threads = 1);

// The alpha ablation grid at tau_f = tau_r = 4, one variant per alpha.
std::vector<SweepVariant> alpha_grid_variants(const DistillConfig& base,
                                              const std::vector<double>& alphas,
                                              double tau = 4.0);
// (tau_f, tau_r) pairs at the configured alpha, plus the accumulated mode.
std::vector<SweepVariant> temperature_grid_variants(
    const DistillConfig& base, const std::vector<std::pair<double, double>>& pairs,
    bool include_accumulate = true);

}  // namespace bdd
