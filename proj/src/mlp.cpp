#include "bdd/mlp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "bdd/errors.hpp"
#include "bdd/ops.hpp"

namespace bdd {

namespace {

constexpr char kCheckpointMagic[8] = {'B', 'D', 'D', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("checkpoint truncated");
  return v;
}

}  // namespace

void MLPSpec::validate() const {
  if (layer_widths.size() < 2) throw ParameterError("MLPSpec: need at least two widths");
  for (auto w : layer_widths)
    if (w == 0) throw ParameterError("MLPSpec: widths must be positive");
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  for (const auto& l : layers) copy.layers.push_back({l.weight.clone(), l.bias.clone()});
  return copy;
}

void ModelParams::set_requires_grad(bool flag) {
  for (auto& l : layers) {
    l.weight.set_requires_grad(flag);
    l.bias.set_requires_grad(flag);
  }
}

bool ModelParams::bit_equal(const ModelParams& other) const {
  const auto a = tensors(), b = other.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape()) return false;
    if (std::memcmp(a[i].values().data(), b[i].values().data(), a[i].numel() * sizeof(double)))
      return false;
  }
  return true;
}

ModelParams init_params(const MLPSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  ModelParams params;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    const std::size_t fan_in = spec.layer_widths[l], fan_out = spec.layer_widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = dist(rng);
    params.layers.push_back({Tensor::from({fan_in, fan_out}, std::move(w), true),
                             Tensor::zeros({fan_out}, true)});
  }
  return params;
}

Tensor forward_logits(const ModelParams& params, const Tensor& x) {
  if (params.layers.empty()) throw ParameterError("forward_logits: empty model");
  if (x.dim() != 2 || x.extent(1) != params.layers.front().weight.extent(0)) {
    throw DimensionError("forward_logits: input " + shape_to_string(x.shape()) +
                         " does not match first layer " +
                         shape_to_string(params.layers.front().weight.shape()));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    h = affine(h, params.layers[l].weight, params.layers[l].bias);
    if (l + 1 < params.layers.size()) h = relu(h);
  }
  return h;
}

std::size_t count_params(const MLPSpec& spec) {
  spec.validate();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l)
    total += spec.layer_widths[l] * spec.layer_widths[l + 1] + spec.layer_widths[l + 1];
  return total;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    write_pod<std::uint64_t>(os, l.weight.extent(0));
    write_pod<std::uint64_t>(os, l.weight.extent(1));
    os.write(reinterpret_cast<const char*>(l.weight.values().data()),
             static_cast<std::streamsize>(l.weight.numel() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(l.bias.values().data()),
             static_cast<std::streamsize>(l.bias.numel() * sizeof(double)));
  }
  if (!os) throw ConfigError("short write to checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ConfigError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto count = read_pod<std::uint32_t>(is);
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rows = read_pod<std::uint64_t>(is);
    const auto cols = read_pod<std::uint64_t>(is);
    std::vector<double> w(rows * cols), b(cols);
    is.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
    if (!is) throw ConfigError("checkpoint truncated in layer " + std::to_string(i));
    params.layers.push_back({Tensor::from({rows, cols}, std::move(w), true),
                             Tensor::from({cols}, std::move(b), true)});
  }
  return params;
}

}  // namespace bdd
