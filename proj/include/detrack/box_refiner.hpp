// SPDX-License-Identifier: Apache-2.0
//
// Box refining and mapping: layers of block-causal self-attention over
// [trajectory boxes..., current box], cross-attention into image tokens and an
// MLP, followed by the vocabulary similarity readout of the current box.

#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "detrack/layers.hpp"
#include "detrack/vocab_embedding.hpp"

namespace detrack {

/// Boolean [4k, 4k] mask; entry (i, j) is true when token i (box i / 4) may
/// attend to token j, i.e. box(j) <= box(i).
torch::Tensor build_mask(std::int64_t k_boxes);

struct RefinerConfig {
  std::int64_t layers = 6;
  std::int64_t dim = 128;
  std::int64_t heads = 4;
  std::int64_t ffn_ratio = 4;
  std::int64_t max_trajectory = 7;
  bool use_template_kv = false;
};

class RefinerLayerImpl : public torch::nn::Module {
 public:
  RefinerLayerImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& pos,
                        const torch::Tensor& mask, const torch::Tensor& memory);
  void zero_output_projections();

  torch::nn::LayerNorm norm_self{nullptr}, norm_cross{nullptr}, norm_memory{nullptr},
      norm_ffn{nullptr};
  MultiHeadAttention self_attn{nullptr}, cross_attn{nullptr};
  FeedForward ffn{nullptr};
};
TORCH_MODULE(RefinerLayer);

struct RefinerOutput {
  torch::Tensor sequence;  // [B, 4 (k + 1), C] every position's latent
  torch::Tensor current;   // [B, 4, C] refined latent of the current box
  torch::Tensor logits;    // [B, 4, bins]
};

class BoxRefinerImpl : public torch::nn::Module {
 public:
  BoxRefinerImpl(const RefinerConfig& config, Vocabulary vocab);

  /// trajectory: [B, k, 4, C] embedded boxes, oldest first (k may be 0 or the
  /// tensor undefined); current: [B, 4, C]; image_tokens: [B, N, C].
  /// `layers` < 0 runs the configured depth.
  RefinerOutput forward(const torch::Tensor& trajectory, const torch::Tensor& current,
                        const torch::Tensor& image_tokens, std::int64_t layers = -1);

  void zero_output_projections();

  const RefinerConfig& config() const { return config_; }

  torch::Tensor temporal_pos;  // [max_trajectory + 1, C], last row = current box
  torch::Tensor slot_pos;      // [4, C]
  torch::nn::ModuleList blocks;
  torch::nn::LayerNorm norm_out{nullptr};

 private:
  RefinerConfig config_;
  Vocabulary vocab_{nullptr};
};
TORCH_MODULE(BoxRefiner);

}  // namespace detrack
