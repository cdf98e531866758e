#include "bdd/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "bdd/errors.hpp"

namespace bdd {

namespace {

// `count` vectors of length `dim`, each of norm `radius`. Gram-Schmidt makes
// them mutually orthogonal while count <= dim; beyond that they are random.
std::vector<std::vector<double>> spread_directions(std::size_t count, std::size_t dim,
                                                   double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    if (c < dim) {
      for (const auto& u : dirs) {
        const double proj = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
        for (std::size_t k = 0; k < dim; ++k) v[k] -= proj * u[k];
      }
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  for (auto& d : dirs)
    for (double& x : d) x *= radius;
  return dirs;
}

constexpr char kDataMagic[8] = {'B', 'D', 'D', 'D', 'A', 'T', 'A', '1'};

struct DataHeader {
  std::uint8_t kind = 0;
  std::uint8_t split = 0;
  std::uint64_t n = 0, d = 0, h = 1, w = 1, c = 0, seed = 0;
};

void write_dump(const std::filesystem::path& path, const DataHeader& hdr, const Tensor& features,
                const std::vector<int>& labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write dataset " + path.string());
  os.write(kDataMagic, sizeof(kDataMagic));
  os.put(static_cast<char>(hdr.kind));
  os.put(static_cast<char>(hdr.split));
  for (std::uint64_t v : {hdr.n, hdr.d, hdr.h, hdr.w, hdr.c, hdr.seed})
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  os.write(reinterpret_cast<const char*>(features.values().data()),
           static_cast<std::streamsize>(features.numel() * sizeof(double)));
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  os.write(reinterpret_cast<const char*>(lab.data()),
           static_cast<std::streamsize>(lab.size() * sizeof(std::int32_t)));
  if (!os) throw ConfigError("short write to dataset " + path.string());
}

DataHeader read_dump(const std::filesystem::path& path, std::uint8_t expected_kind,
                     std::vector<double>& features, std::vector<int>& labels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open dataset " + path.string());
  char magic[sizeof(kDataMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kDataMagic, sizeof(magic)) != 0) {
    throw ConfigError(path.string() + " is not a dataset dump (bad magic)");
  }
  DataHeader hdr;
  hdr.kind = static_cast<std::uint8_t>(is.get());
  hdr.split = static_cast<std::uint8_t>(is.get());
  for (std::uint64_t* v : {&hdr.n, &hdr.d, &hdr.h, &hdr.w, &hdr.c, &hdr.seed})
    is.read(reinterpret_cast<char*>(v), sizeof(*v));
  if (!is) throw ConfigError("dataset header truncated: " + path.string());
  if (hdr.kind != expected_kind) throw ConfigError("dataset kind mismatch in " + path.string());
  if (hdr.split > 2) throw ConfigError("dataset split tag invalid in " + path.string());
  const std::uint64_t cells = hdr.n * hdr.h * hdr.w;
  features.resize(cells * hdr.d);
  is.read(reinterpret_cast<char*>(features.data()),
          static_cast<std::streamsize>(features.size() * sizeof(double)));
  std::vector<std::int32_t> lab(cells);
  is.read(reinterpret_cast<char*>(lab.data()),
          static_cast<std::streamsize>(lab.size() * sizeof(std::int32_t)));
  if (!is) throw ConfigError("dataset body truncated: " + path.string());
  labels.assign(lab.begin(), lab.end());
  return hdr;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::full:
      break;
  }
  return "full";
}

ClassificationDataset gen_gaussian_mixture(std::size_t classes, std::size_t dim,
                                           std::size_t n_per_class, double overlap,
                                           std::uint64_t seed, const MixtureOptions& opts) {
  if (classes < 2) throw ParameterError("gen_gaussian_mixture: need at least 2 classes");
  if (dim < 2) throw ParameterError("gen_gaussian_mixture: need dimension >= 2");
  if (n_per_class < 1) throw ParameterError("gen_gaussian_mixture: need >= 1 sample per class");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw ParameterError("overlap must be in [0,1]");

  std::mt19937_64 rng(seed);
  auto means = spread_directions(classes, dim, opts.separation / std::sqrt(2.0), rng);
  for (std::size_t k = 0; k + 1 < classes; k += 2) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double mid = 0.5 * (means[k][j] + means[k + 1][j]);
      means[k][j] = mid + (1.0 - overlap) * (means[k][j] - mid);
      means[k + 1][j] = mid + (1.0 - overlap) * (means[k + 1][j] - mid);
    }
  }

  const std::size_t n = classes * n_per_class;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::normal_distribution<double> noise(0.0, opts.noise);
  std::vector<double> x(n * dim);
  std::vector<int> y(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t slot = order[s];
    const int label = static_cast<int>(s / n_per_class);
    y[slot] = label;
    for (std::size_t j = 0; j < dim; ++j) x[slot * dim + j] = means[label][j] + noise(rng);
  }
  return {Tensor::from({n, dim}, std::move(x)), std::move(y), classes, seed, Split::full};
}

SegmentationGridDataset gen_segmentation_grids(std::size_t classes, std::size_t height,
                                               std::size_t width, std::size_t n,
                                               std::uint64_t seed, const GridOptions& opts) {
  if (classes < 2) throw ParameterError("gen_segmentation_grids: need at least 2 classes");
  if (height < 4 || width < 4) throw ParameterError("gen_segmentation_grids: grid must be >= 4x4");
  if (n < 1) throw ParameterError("gen_segmentation_grids: need at least one grid");
  if (opts.feature_dim < 1 || opts.min_rects < 1 || opts.max_rects < opts.min_rects) {
    throw ParameterError("gen_segmentation_grids: invalid options");
  }
  if (opts.full_grid_class &&
      (*opts.full_grid_class < 0 || static_cast<std::size_t>(*opts.full_grid_class) >= classes)) {
    throw ParameterError("gen_segmentation_grids: forced class out of range");
  }

  std::mt19937_64 rng(seed);
  const std::size_t d = opts.feature_dim;
  const auto means = spread_directions(classes, d, opts.separation / std::sqrt(2.0), rng);
  std::normal_distribution<double> noise(0.0, opts.noise);

  const std::size_t cells = height * width;
  std::vector<int> labels(n * cells, 0);
  std::vector<double> x(n * d * cells);
  std::uniform_int_distribution<std::size_t> rect_count(opts.min_rects, opts.max_rects);
  std::uniform_int_distribution<int> rect_class(1, static_cast<int>(classes) - 1);
  std::uniform_int_distribution<std::size_t> rect_h(2, height / 2), rect_w(2, width / 2);

  for (std::size_t s = 0; s < n; ++s) {
    int* grid = &labels[s * cells];
    if (opts.full_grid_class) {
      std::fill(grid, grid + cells, *opts.full_grid_class);
    } else {
      const std::size_t rects = rect_count(rng);
      for (std::size_t r = 0; r < rects; ++r) {
        const int cls = rect_class(rng);
        const std::size_t rh = rect_h(rng), rw = rect_w(rng);
        const std::size_t top = std::uniform_int_distribution<std::size_t>(0, height - rh)(rng);
        const std::size_t left = std::uniform_int_distribution<std::size_t>(0, width - rw)(rng);
        for (std::size_t i = top; i < top + rh; ++i)
          for (std::size_t j = left; j < left + rw; ++j) grid[i * width + j] = cls;
      }
    }
    for (std::size_t c = 0; c < cells; ++c) {
      const auto& mean = means[grid[c]];
      for (std::size_t k = 0; k < d; ++k) x[(s * d + k) * cells + c] = mean[k] + noise(rng);
    }
  }
  return {Tensor::from({n, d, height, width}, std::move(x)), std::move(labels), classes, seed,
          Split::full};
}

SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed,
                           const std::vector<int>* labels) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ParameterError("split fraction must be in (0,1)");
  }
  std::mt19937_64 rng(seed);
  SplitIndices out;
  auto take = [&](std::vector<std::size_t> pool) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto k = static_cast<std::size_t>(std::llround(train_fraction * pool.size()));
    out.train.insert(out.train.end(), pool.begin(), pool.begin() + k);
    out.val.insert(out.val.end(), pool.begin() + k, pool.end());
  };
  if (labels) {
    if (labels->size() != n) throw DimensionError("split_indices: label count mismatch");
    const int top = n ? *std::max_element(labels->begin(), labels->end()) : -1;
    for (int c = 0; c <= top; ++c) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < n; ++i)
        if ((*labels)[i] == c) pool.push_back(i);
      take(std::move(pool));
    }
  } else {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    take(std::move(pool));
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

ClassificationDataset subset(const ClassificationDataset& ds, const std::vector<std::size_t>& idx,
                             Split tag) {
  const std::size_t d = ds.feature_dim();
  std::vector<double> x(idx.size() * d);
  std::vector<int> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= ds.size()) throw IndexError("subset: index out of range");
    std::copy_n(ds.features.values().begin() + idx[i] * d, d, x.begin() + i * d);
    y[i] = ds.labels[idx[i]];
  }
  return {Tensor::from({idx.size(), d}, std::move(x)), std::move(y), ds.class_count, ds.seed, tag};
}

SegmentationGridDataset subset(const SegmentationGridDataset& ds,
                               const std::vector<std::size_t>& idx, Split tag) {
  const std::size_t cells = ds.height() * ds.width();
  const std::size_t block = ds.feature_dim() * cells;
  std::vector<double> x(idx.size() * block);
  std::vector<int> y(idx.size() * cells);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= ds.size()) throw IndexError("subset: index out of range");
    std::copy_n(ds.features.values().begin() + idx[i] * block, block, x.begin() + i * block);
    std::copy_n(ds.labels.begin() + idx[i] * cells, cells, y.begin() + i * cells);
  }
  return {Tensor::from({idx.size(), ds.feature_dim(), ds.height(), ds.width()}, std::move(x)),
          std::move(y), ds.class_count, ds.seed, tag};
}

std::pair<ClassificationDataset, ClassificationDataset> train_val_split(
    const ClassificationDataset& ds, double train_fraction, std::uint64_t seed) {
  const auto idx = split_indices(ds.size(), train_fraction, seed, &ds.labels);
  return {subset(ds, idx.train, Split::train), subset(ds, idx.val, Split::val)};
}

std::pair<SegmentationGridDataset, SegmentationGridDataset> train_val_split(
    const SegmentationGridDataset& ds, double train_fraction, std::uint64_t seed) {
  const auto idx = split_indices(ds.size(), train_fraction, seed);
  return {subset(ds, idx.train, Split::train), subset(ds, idx.val, Split::val)};
}

Tensor cell_features(const SegmentationGridDataset& ds) {
  const std::size_t n = ds.size(), d = ds.feature_dim(), cells = ds.height() * ds.width();
  std::vector<double> x(n * cells * d);
  const auto src = ds.features.values();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t c = 0; c < cells; ++c)
        x[(s * cells + c) * d + k] = src[(s * d + k) * cells + c];
  return Tensor::from({n * cells, d}, std::move(x));
}

void save_dataset(const ClassificationDataset& ds, const std::filesystem::path& path) {
  DataHeader hdr{0, static_cast<std::uint8_t>(ds.split), ds.size(), ds.feature_dim(), 1, 1,
                 ds.class_count, ds.seed};
  write_dump(path, hdr, ds.features, ds.labels);
}

void save_dataset(const SegmentationGridDataset& ds, const std::filesystem::path& path) {
  DataHeader hdr{1, static_cast<std::uint8_t>(ds.split), ds.size(), ds.feature_dim(), ds.height(),
                 ds.width(), ds.class_count, ds.seed};
  write_dump(path, hdr, ds.features, ds.labels);
}

ClassificationDataset load_classification_dataset(const std::filesystem::path& path) {
  std::vector<double> x;
  std::vector<int> y;
  const DataHeader hdr = read_dump(path, 0, x, y);
  return {Tensor::from({hdr.n, hdr.d}, std::move(x)), std::move(y), hdr.c, hdr.seed,
          static_cast<Split>(hdr.split)};
}

SegmentationGridDataset load_segmentation_dataset(const std::filesystem::path& path) {
  std::vector<double> x;
  std::vector<int> y;
  const DataHeader hdr = read_dump(path, 1, x, y);
  return {Tensor::from({hdr.n, hdr.d, hdr.h, hdr.w}, std::move(x)), std::move(y), hdr.c, hdr.seed,
          static_cast<Split>(hdr.split)};
}

}  // namespace bdd
