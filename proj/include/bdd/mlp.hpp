#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bdd/tensor.hpp"

namespace bdd {

// Fully connected network, relu between layers, raw logits at the output.
struct MLPSpec {
  std::vector<std::size_t> layer_widths;  // input, hidden..., classes
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t class_count() const { return layer_widths.back(); }
};

struct Layer {
  Tensor weight;  // [fan_in, fan_out]
  Tensor bias;    // [fan_out]
};

struct ModelParams {
  std::vector<Layer> layers;

  std::vector<Tensor> tensors() const;
  ModelParams clone() const;
  void set_requires_grad(bool flag);
  bool bit_equal(const ModelParams& other) const;
};

/// Weights ~ U(-s, s), s = sqrt(6 / (fan_in + fan_out)); biases zero.
ModelParams init_params(const MLPSpec& spec);

Tensor forward_logits(const ModelParams& params, const Tensor& x);

std::size_t count_params(const MLPSpec& spec);

/// Binary checkpoint: magic "BDDCKPT1", u32 layer count, then per layer the
/// weight rows/cols (u64) followed by weight and bias values as raw
/// little-endian doubles. Loading restores values bit-exactly.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace bdd
