// SPDX-License-Identifier: Apache-2.0
//
// Discrete coordinate vocabulary: quantization of normalized coordinates into
// B bins, the word-embedding table, and the similarity readout that maps box
// latents back to per-coordinate bin distributions.

#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <vector>

#include "detrack/geometry.hpp"

namespace detrack {

using BoxTokens = std::array<std::int64_t, 4>;

/// round(clamp(x, 0, 1) * (B - 1)) with halves rounded up.
std::int64_t quantize(double x, std::int64_t bins);
double dequantize(std::int64_t token, std::int64_t bins);

BoxTokens quantize_box(const BoundingBox& b, std::int64_t bins);
BoxTokens quantize_box(const std::array<double, 4>& corners, std::int64_t bins);

struct VocabConfig {
  std::int64_t bins = 100;
  std::int64_t dim = 128;
  bool tied = true;
};

class VocabularyImpl : public torch::nn::Module {
 public:
  explicit VocabularyImpl(const VocabConfig& config);

  /// [..., 4] int64 tokens -> [..., 4, C] rows of the table.
  torch::Tensor embed(const torch::Tensor& tokens) const;
  /// embed() scaled by sqrt(C). Rows start as a unit-norm sin-cos code of the
  /// bin index, which keeps the readout well conditioned; the scale lifts
  /// them to unit-sized entries as inputs.
  torch::Tensor embed_input(const torch::Tensor& tokens) const;
  /// [..., 4, C] latent -> [..., 4, B] dot-product logits.
  torch::Tensor readout(const torch::Tensor& latent) const;

  const VocabConfig& config() const { return config_; }
  std::int64_t bins() const { return config_.bins; }

  torch::Tensor table;
  torch::Tensor output_table;  // same tensor as `table` when tied

 private:
  VocabConfig config_;
};
TORCH_MODULE(Vocabulary);

torch::Tensor tokens_tensor(const std::vector<BoxTokens>& tokens);

/// Per-coordinate logits with row-wise softmax probabilities (single box).
struct CoordLogits {
  torch::Tensor logits;  // [4, B]
  torch::Tensor probs;   // [4, B]

  static CoordLogits from_logits(const torch::Tensor& logits);
};

struct DecodedBox {
  BoundingBox box;
  BoxTokens tokens{};
  double confidence = 0.0;  // mean of the four per-row max probabilities
};

/// Per-row argmax (lowest index wins ties), dequantized and canonicalized.
DecodedBox decode_box(const CoordLogits& logits);
/// Batched decode of [N, 4, B] logits.
std::vector<DecodedBox> decode_boxes(const torch::Tensor& logits);

}  // namespace detrack
