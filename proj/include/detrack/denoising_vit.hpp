// SPDX-License-Identifier: Apache-2.0
//
// Denoising vision transformer. Template and search patches are fused by
// joint self-attention blocks; after each image block a denoising block
// updates the 4-token box latent:
//
//   x'  = x + Attn(q = x, k = v = s)
//   x'' = x' + FFN(x')
//   eps = Linear(ReLU(Linear(x'')))
//   x_next = x'' - eps
//
// so a single forward pass walks the box latent through `depth` denoising
// steps. The per-block states and noise predictions are kept in a trace.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "detrack/layers.hpp"
#include "detrack/vocab_embedding.hpp"

namespace detrack {

enum class NoisePredMode { kPerBlock, kTotal };
/// Which parts of the denoising block are active. kOff passes the box latent
/// through unchanged; kAttentionOnly drops NoisePred.
enum class DenoiseBlockMode { kFull, kAttentionOnly, kOff };

NoisePredMode parse_noise_pred_mode(const std::string& s);
std::string to_string(NoisePredMode m);
DenoiseBlockMode parse_denoise_block_mode(const std::string& s);
std::string to_string(DenoiseBlockMode m);

struct VitConfig {
  std::int64_t depth = 4;
  std::int64_t dim = 128;
  std::int64_t heads = 4;
  std::int64_t patch = 8;
  std::int64_t ffn_ratio = 4;
  std::int64_t template_size = 32;
  std::int64_t search_size = 64;
  NoisePredMode noise_pred_mode = NoisePredMode::kPerBlock;
  DenoiseBlockMode block_mode = DenoiseBlockMode::kFull;
  bool template_pos = true;

  std::int64_t tokens_per_template() const;
  std::int64_t search_tokens() const;
  std::int64_t search_grid() const { return search_size / patch; }
  void validate() const;
};

/// Joint self-attention over the concatenation [s, z] followed by an MLP,
/// pre-norm with residuals. Returns the split (z', s').
class ImageAttentionBlockImpl : public torch::nn::Module {
 public:
  ImageAttentionBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden);

  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& z,
                                                  const torch::Tensor& s,
                                                  torch::Tensor* weights_out = nullptr);
  void zero_output_projections();

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  MultiHeadAttention attn{nullptr};
  FeedForward mlp{nullptr};
};
TORCH_MODULE(ImageAttentionBlock);

struct DenoiseStep {
  torch::Tensor next;        // x''_i - eps
  torch::Tensor eps;         // predicted noise (zeros when no head)
  torch::Tensor refined;     // x''_i
};

class DenoisingBlockImpl : public torch::nn::Module {
 public:
  DenoisingBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden,
                     DenoiseBlockMode mode, bool has_noise_pred);

  DenoiseStep forward(const torch::Tensor& s, const torch::Tensor& x);

  bool has_noise_pred() const { return has_noise_pred_; }
  /// Zero the attention output projection and the FFN second layer, leaving
  /// x_next = x - eps.
  void zero_residual_branches();
  void zero_noise_pred();

  torch::nn::LayerNorm norm_q{nullptr}, norm_kv{nullptr}, norm_ffn{nullptr};
  MultiHeadAttention attn{nullptr};
  FeedForward ffn{nullptr};
  Dense noise_fc1{nullptr}, noise_fc2{nullptr};

 private:
  DenoiseBlockMode mode_;
  bool has_noise_pred_;
};
TORCH_MODULE(DenoisingBlock);

/// states[0] = x_I (embedded noisy box), states[j] = output of block j.
struct DenoiseTrace {
  std::vector<torch::Tensor> states;   // depth + 1 entries, [B, 4, C]
  std::vector<torch::Tensor> eps;      // depth entries
  std::vector<torch::Tensor> refined;  // x''_j per block
};

struct VitOutput {
  torch::Tensor z;  // [B, N_z, C] final template tokens (normed)
  torch::Tensor s;  // [B, N_s, C] final search tokens (normed)
  DenoiseTrace trace;
};

class DenoisingVitImpl : public torch::nn::Module {
 public:
  DenoisingVitImpl(const VitConfig& config, Vocabulary vocab);

  /// templates [B, n, 3, Hz, Wz], search [B, 3, Hs, Ws], tokens [B, 4].
  VitOutput forward(const torch::Tensor& templates, const torch::Tensor& search,
                    const torch::Tensor& noisy_tokens);

  /// Runs the blocks on already-embedded tokens: z [B, N_z, C],
  /// s [B, N_s, C], box latent [B, 4, C].
  VitOutput forward_tokens(torch::Tensor z, torch::Tensor s, torch::Tensor box);

  /// Patchify + project + position. images [B, 3, H, W] -> [B, N, C].
  torch::Tensor embed_images(const torch::Tensor& images) const;
  torch::Tensor embed_templates(const torch::Tensor& templates) const;
  torch::Tensor embed_search(const torch::Tensor& search) const;
  torch::Tensor embed_box(const torch::Tensor& tokens) const;

  void zero_residual_branches();

  const VitConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }

  Dense patch_embed{nullptr};
  torch::Tensor template_pos;
  torch::Tensor search_pos;
  torch::Tensor box_slot;
  torch::nn::ModuleList image_blocks;
  torch::nn::ModuleList denoise_blocks;
  torch::nn::LayerNorm norm_out{nullptr};

 private:
  VitConfig config_;
  Vocabulary vocab_{nullptr};
};
TORCH_MODULE(DenoisingVit);

/// Decode states[j] of a trace directly through the vocabulary readout
/// (no refiner). Returns one box per batch element.
std::vector<DecodedBox> intermediate_decode(const DenoiseTrace& trace, std::size_t j,
                                            const Vocabulary& vocab);

}  // namespace detrack
