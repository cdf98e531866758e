#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdd/sweep.hpp"

namespace bdd {

enum class Task { classification, segmentation };
std::string to_string(Task task);

struct DataConfig {
  Task task = Task::classification;
  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 500;  // classification
  double overlap = 0.6;         // classification
  double separation = 10.0;
  double noise = 1.0;
  std::uint64_t seed = 7;
  double train_fraction = 0.8;
  // Segmentation grids.
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t samples = 400;
  std::size_t min_rects = 1;
  std::size_t max_rects = 3;
};

struct SweepGrid {
  std::vector<double> alphas{0.0, 1.0, 2.0, 4.0, 8.0};
  double alpha_tau = 4.0;
  std::vector<std::pair<double, double>> temperatures{{2.0, 8.0}, {4.0, 4.0}, {8.0, 2.0}};
  bool include_accumulate = true;
};

/// Everything one experiment file describes. The teacher and student runs
/// share the data; the student run also carries the loss mode and the
/// distillation hyperparameters.
struct ExperimentConfig {
  DataConfig data;
  TrainConfig teacher;
  TrainConfig student;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  SweepGrid sweep;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Parses YAML text. Errors are ConfigError messages of the form
/// "<source>:<line>: <field>: <problem>"; unknown keys are rejected.
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& source = "<config>");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ClassificationSplits {
  ClassificationDataset train;
  ClassificationDataset val;
};

struct SegmentationSplits {
  SegmentationGridDataset train;
  SegmentationGridDataset val;
};

ClassificationSplits make_classification_data(const DataConfig& cfg);
SegmentationSplits make_segmentation_data(const DataConfig& cfg);

}  // namespace bdd
