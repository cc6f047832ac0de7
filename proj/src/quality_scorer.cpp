// SPDX-License-Identifier: Apache-2.0

#include "detrack/quality_scorer.hpp"

#include <stdexcept>

namespace detrack {

QualityHeadImpl::QualityHeadImpl(const QualityConfig& config) : config_(config) {
  if (config_.hidden < 1) throw std::invalid_argument("iounet.hidden must be >= 1");
  fc1 = register_module("fc1", Dense(config_.dim + 4, config_.hidden));
  fc2 = register_module("fc2", Dense(config_.hidden, 1));
}

torch::Tensor QualityHeadImpl::pooling_weights(const torch::Tensor& boxes) const {
  const auto g = config_.grid;
  const auto opts = torch::TensorOptions().dtype(boxes.scalar_type()).device(boxes.device());
  auto centers = (torch::arange(g, opts) + 0.5) / double(g);
  // token index = row * g + col; x from col, y from row
  auto cx = centers.repeat({g});                // [N]
  auto cy = centers.repeat_interleave(g);       // [N]
  auto b = boxes.detach();
  auto x1 = b.select(1, 0).unsqueeze(1), y1 = b.select(1, 1).unsqueeze(1);
  auto x2 = b.select(1, 2).unsqueeze(1), y2 = b.select(1, 3).unsqueeze(1);
  auto inside = cx.ge(x1) & cx.le(x2) & cy.ge(y1) & cy.le(y2);  // [B, N]
  auto mcx = (x1 + x2) * 0.5, mcy = (y1 + y2) * 0.5;
  auto dist = (cx - mcx).pow(2) + (cy - mcy).pow(2);
  auto nearest = torch::zeros_like(dist).scatter_(1, dist.argmin(1, true), 1.0);
  auto any = inside.any(1, true);
  auto w = torch::where(any, inside.to(dist.scalar_type()), nearest);
  return w / w.sum(1, true);
}

torch::Tensor QualityHeadImpl::forward(const torch::Tensor& search_tokens,
                                       const torch::Tensor& boxes) {
  TORCH_CHECK(search_tokens.dim() == 3 && search_tokens.size(1) == config_.grid * config_.grid,
              "quality head: search token count does not match grid");
  TORCH_CHECK(boxes.dim() == 2 && boxes.size(1) == 4, "quality head: boxes must be [B, 4]");
  auto w = pooling_weights(boxes).to(search_tokens.scalar_type());
  auto pooled = torch::bmm(w.unsqueeze(1), search_tokens).squeeze(1);  // [B, C]
  macs::add(search_tokens.numel());
  auto feat = torch::cat({pooled, boxes.to(search_tokens.scalar_type())}, 1);
  return torch::sigmoid(fc2(torch::relu(fc1(feat)))).squeeze(1);
}

double score(QualityHead& head, const torch::Tensor& search_tokens, const BoundingBox& box) {
  torch::NoGradGuard guard;
  auto s = head->forward(search_tokens, boxes_tensor({box}).to(search_tokens.scalar_type()));
  return s.item<double>();
}

double quality_loss(double pred_score, double true_iou) {
  const double d = pred_score - true_iou;
  return d * d;
}

torch::Tensor quality_loss(const torch::Tensor& pred, const torch::Tensor& true_iou) {
  return (pred - true_iou).pow(2).mean();
}

torch::Tensor boxes_tensor(const std::vector<BoundingBox>& boxes) {
  auto t = torch::empty({std::int64_t(boxes.size()), 4}, torch::kFloat32);
  auto acc = t.accessor<float, 2>();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    acc[i][0] = float(boxes[i].x1);
    acc[i][1] = float(boxes[i].y1);
    acc[i][2] = float(boxes[i].x2);
    acc[i][3] = float(boxes[i].y2);
  }
  return t;
}

}  // namespace detrack
