#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

inline constexpr std::size_t kConvLayers = 6;

struct KernelSize {
  std::size_t height;
  std::size_t width;
  bool operator==(const KernelSize&) const = default;
};

// Hyperparameters of the embedding network. pool_schedule[i] is the max-pool
// window applied after conv layer i, or 0 for none.
struct EmbeddingNetConfig {
  std::size_t input_height = 100;
  std::size_t input_width = 100;
  std::size_t input_channels = 3;
  std::array<std::size_t, kConvLayers> conv_channels{50, 84, 118, 152, 186, 220};
  std::array<KernelSize, kConvLayers> conv_kernels{
      {{3, 3}, {3, 3}, {2, 2}, {2, 2}, {2, 2}, {2, 2}}};
  std::array<std::size_t, kConvLayers> pool_schedule{3, 3, 2, 0, 0, 0};
  std::size_t dense_width = 512;
  std::size_t embedding_dim = 128;
  float l1_kernel = 0.001f;
  float l1_bias = 0.001f;
  float l1_activity = 0.001f;

  bool operator==(const EmbeddingNetConfig&) const = default;

  // Default ladder with the first pool schedule (from a fixed preference
  // list) that keeps the final feature map at least 1x1 for this input.
  static EmbeddingNetConfig for_input(std::size_t height, std::size_t width,
                                      std::size_t channels = 3);

  // Throws ShapeError: non-increasing channels, zero sizes, or a spatial
  // collapse.
  void validate() const;

  // Endpoints and default kernel ladder.
  bool uses_reference_ladder() const;

  std::string to_canonical_text() const;
  static EmbeddingNetConfig from_canonical_text(const std::string& text);
};

struct LayerGeometry {
  std::size_t in_height, in_width;
  std::size_t conv_height, conv_width;
  std::size_t out_height, out_width;
};

// Spatial sizes through the conv/pool ladder. Throws ShapeError on collapse,
// naming the layer.
std::vector<LayerGeometry> layer_geometry(const EmbeddingNetConfig& config);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// conv x6 (each relu, optional pool) -> flatten -> dense(dense_width), relu
// -> dense(embedding_dim), relu.
class EmbeddingNet {
 public:
  struct Output {
    Tensor embedding;  // [B, embedding_dim]
    Tensor hidden;     // [B, dense_width], post-activation
  };

  // He-uniform weights, zero biases.
  static EmbeddingNet build(const EmbeddingNetConfig& config, std::uint64_t seed);

  const EmbeddingNetConfig& config() const { return config_; }

  Output forward(const Tensor& batch) const;
  Tensor embed(const Tensor& batch) const { return forward(batch).embedding; }

  // Fixed order: conv1.kernel, conv1.bias, ..., dense1.*, dense2.*.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  const Tensor& hidden_weight() const { return dense1_weight_; }
  const Tensor& hidden_bias() const { return dense1_bias_; }

  // Deep copy with independent parameter storage.
  EmbeddingNet clone() const;

  // Overwrites parameter values by name. Throws CheckpointError on a
  // missing tensor and ShapeError on a shape mismatch.
  void load_parameters(const std::vector<NamedTensor>& tensors);

 private:
  EmbeddingNet() = default;

  EmbeddingNetConfig config_;
  std::vector<LayerGeometry> geometry_;
  std::array<Tensor, kConvLayers> conv_kernel_;
  std::array<Tensor, kConvLayers> conv_bias_;
  Tensor dense1_weight_, dense1_bias_;
  Tensor dense2_weight_, dense2_bias_;
};

struct SiameseOutput {
  Tensor distances;  // [B]
  Tensor hidden;     // [2B, dense_width]: rows of a, then rows of b
};

// Both branches run through the same parameter tensors in one batched pass.
SiameseOutput siamese_forward_full(const EmbeddingNet& net, const Tensor& a, const Tensor& b);
Tensor siamese_forward(const EmbeddingNet& net, const Tensor& a, const Tensor& b);

// l1_kernel*|W|_1 + l1_bias*|b|_1 over the hidden dense layer, plus
// l1_activity times the batch mean of per-row |activation|_1.
Tensor l1_penalty(const EmbeddingNet& net, const Tensor& activations);

}  // namespace fewshot
