// SPDX-License-Identifier: Apache-2.0
//
// IoU-prediction head: estimates the overlap of a decoded box with the target
// from post-ViT search tokens. Its score gates visual-memory updates.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "detrack/geometry.hpp"
#include "detrack/layers.hpp"

namespace detrack {

struct QualityConfig {
  std::int64_t dim = 128;
  std::int64_t hidden = 64;
  std::int64_t grid = 4;  // search tokens per side
};

class QualityHeadImpl : public torch::nn::Module {
 public:
  explicit QualityHeadImpl(const QualityConfig& config);

  /// search_tokens [B, N_s, C], boxes [B, 4] in search coordinates.
  /// Returns scores [B] in [0, 1].
  torch::Tensor forward(const torch::Tensor& search_tokens, const torch::Tensor& boxes);

  /// Pooling weights [B, N_s]: uniform over patches whose centres fall inside
  /// the box, or one-hot on the patch nearest the box centre.
  torch::Tensor pooling_weights(const torch::Tensor& boxes) const;

  const QualityConfig& config() const { return config_; }

  Dense fc1{nullptr}, fc2{nullptr};

 private:
  QualityConfig config_;
};
TORCH_MODULE(QualityHead);

double score(QualityHead& head, const torch::Tensor& search_tokens, const BoundingBox& box);

/// Squared error.
double quality_loss(double pred_score, double true_iou);
torch::Tensor quality_loss(const torch::Tensor& pred, const torch::Tensor& true_iou);

torch::Tensor boxes_tensor(const std::vector<BoundingBox>& boxes);

}  // namespace detrack
