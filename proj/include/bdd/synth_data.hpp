#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bdd/tensor.hpp"

namespace bdd {

enum class Split : std::uint8_t { full = 0, train = 1, val = 2 };
std::string to_string(Split split);

struct ClassificationDataset {
  Tensor features;          // [N, D]
  std::vector<int> labels;  // [N]
  std::size_t class_count = 0;
  std::uint64_t seed = 0;
  Split split = Split::full;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return features.extent(1); }
};

struct SegmentationGridDataset {
  Tensor features;          // [N, D, H, W]
  std::vector<int> labels;  // [N, H, W] row-major
  std::size_t class_count = 0;
  std::uint64_t seed = 0;
  Split split = Split::full;

  std::size_t size() const { return features.extent(0); }
  std::size_t feature_dim() const { return features.extent(1); }
  std::size_t height() const { return features.extent(2); }
  std::size_t width() const { return features.extent(3); }
};

struct MixtureOptions {
  double separation = 10.0;  // distance between unpaired class means, in noise sigmas
  double noise = 1.0;
};

/// C isotropic Gaussian classes in D dimensions. Class means lie on
/// (near-)orthogonal directions at pairwise distance `separation`; the means
/// of each twin pair (2k, 2k+1) are then pulled toward their midpoint so
/// their distance shrinks by (1 - overlap). Samples are emitted in a seeded
/// shuffled order.
ClassificationDataset gen_gaussian_mixture(std::size_t classes, std::size_t dim,
                                           std::size_t n_per_class, double overlap,
                                           std::uint64_t seed, const MixtureOptions& opts = {});

struct GridOptions {
  std::size_t feature_dim = 8;
  std::size_t min_rects = 1;
  std::size_t max_rects = 3;
  double separation = 3.0;
  double noise = 1.0;
  // Forces every grid to a single rectangle covering the whole grid.
  std::optional<int> full_grid_class;
};

/// Background class 0 plus 1..3 axis-aligned rectangles of classes drawn
/// from [1, C). Each cell carries its class mean vector plus Gaussian noise.
SegmentationGridDataset gen_segmentation_grids(std::size_t classes, std::size_t height,
                                               std::size_t width, std::size_t n,
                                               std::uint64_t seed, const GridOptions& opts = {});

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded split with `train_fraction` of the samples in train. When labels
/// are given the split is stratified per class. Both lists are sorted.
SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed,
                           const std::vector<int>* labels = nullptr);

ClassificationDataset subset(const ClassificationDataset& ds, const std::vector<std::size_t>& idx,
                             Split tag);
SegmentationGridDataset subset(const SegmentationGridDataset& ds,
                               const std::vector<std::size_t>& idx, Split tag);

std::pair<ClassificationDataset, ClassificationDataset> train_val_split(
    const ClassificationDataset& ds, double train_fraction, std::uint64_t seed);
std::pair<SegmentationGridDataset, SegmentationGridDataset> train_val_split(
    const SegmentationGridDataset& ds, double train_fraction, std::uint64_t seed);

// Per-cell view for the MLP: [N*H*W, D] features in (n, h, w) order.
Tensor cell_features(const SegmentationGridDataset& ds);

/// Binary dump: magic "BDDDATA1", kind (u8: 0 classification, 1 grid),
/// split (u8), then u64 N, D, H, W, C, seed, followed by the features as
/// raw doubles and labels as int32. H = W = 1 for classification.
void save_dataset(const ClassificationDataset& ds, const std::filesystem::path& path);
void save_dataset(const SegmentationGridDataset& ds, const std::filesystem::path& path);
ClassificationDataset load_classification_dataset(const std::filesystem::path& path);
SegmentationGridDataset load_segmentation_dataset(const std::filesystem::path& path);

}  // namespace bdd
