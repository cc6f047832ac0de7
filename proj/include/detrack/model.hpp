// SPDX-License-Identifier: Apache-2.0
//
// The full tracker network: shared vocabulary, denoising ViT, box refiner and
// quality head.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "detrack/box_refiner.hpp"
#include "detrack/denoising_vit.hpp"
#include "detrack/quality_scorer.hpp"
#include "detrack/vocab_embedding.hpp"

namespace detrack {

struct ModelConfig {
  VocabConfig vocab;
  VitConfig vit;
  RefinerConfig refiner;
  QualityConfig quality;

  /// Propagates shared widths (dim, heads, search grid) into sub-configs.
  void sync();
  void validate() const;
};

/// Desk-scale default and the two published-scale presets.
ModelConfig preset_model(const std::string& name);

struct ModelOutput {
  VitOutput vit;
  RefinerOutput refined;
};

class DeTrackModelImpl : public torch::nn::Module {
 public:
  explicit DeTrackModelImpl(const ModelConfig& config);

  /// templates [B, n, 3, Hz, Wz]; search [B, 3, Hs, Ws]; noisy_tokens [B, 4];
  /// trajectory_tokens [B, k, 4] (may be undefined / k == 0).
  ModelOutput forward(const torch::Tensor& templates, const torch::Tensor& search,
                      const torch::Tensor& noisy_tokens,
                      const torch::Tensor& trajectory_tokens = {},
                      std::int64_t refiner_layers = -1);

  torch::Tensor refiner_memory(const VitOutput& vit_out) const;

  std::vector<torch::Tensor> backbone_parameters() const;  // vocab + ViT
  std::vector<torch::Tensor> refiner_parameters() const;
  std::vector<torch::Tensor> scorer_parameters() const;

  const ModelConfig& config() const { return config_; }

  Vocabulary vocab{nullptr};
  DenoisingVit vit{nullptr};
  BoxRefiner refiner{nullptr};
  QualityHead scorer{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(DeTrackModel);

/// Closed-form multiply-accumulate count of one tracking forward (ViT,
/// refiner, readout, and one quality-head evaluation), matching what the
/// layer counters record.
struct CostBreakdown {
  std::int64_t vit = 0;
  std::int64_t denoise = 0;
  std::int64_t refiner = 0;
  std::int64_t readout = 0;
  std::int64_t scorer = 0;
  std::int64_t total() const { return vit + denoise + refiner + readout + scorer; }
};

CostBreakdown analytic_macs(const ModelConfig& config, std::int64_t n_templates,
                            std::int64_t trajectory_boxes);

}  // namespace detrack
