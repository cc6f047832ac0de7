// SPDX-License-Identifier: Apache-2.0

#include "detrack/box_refiner.hpp"

#include <stdexcept>

namespace detrack {

torch::Tensor build_mask(std::int64_t k_boxes) {
  if (k_boxes < 1) throw std::invalid_argument("build_mask: need at least one box");
  auto box_of = torch::arange(4 * k_boxes, torch::kInt64).floor_divide(4);
  return box_of.unsqueeze(0).le(box_of.unsqueeze(1));
}

RefinerLayerImpl::RefinerLayerImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden) {
  norm_self = register_module("norm_self", make_layer_norm(dim));
  self_attn = register_module("self_attn", MultiHeadAttention(dim, heads));
  norm_cross = register_module("norm_cross", make_layer_norm(dim));
  norm_memory = register_module("norm_memory", make_layer_norm(dim));
  cross_attn = register_module("cross_attn", MultiHeadAttention(dim, heads));
  norm_ffn = register_module("norm_ffn", make_layer_norm(dim));
  ffn = register_module("ffn", FeedForward(dim, hidden));
}

torch::Tensor RefinerLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& pos,
                                        const torch::Tensor& mask,
                                        const torch::Tensor& memory) {
  auto h = norm_self(x) + pos;
  auto y = x + self_attn(h, h, mask);
  y = y + cross_attn(norm_cross(y) + pos, norm_memory(memory));
  return y + ffn(norm_ffn(y));
}

void RefinerLayerImpl::zero_output_projections() {
  self_attn->out->zero_();
  cross_attn->out->zero_();
  ffn->fc2->zero_();
}

BoxRefinerImpl::BoxRefinerImpl(const RefinerConfig& config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.layers < 1) throw std::invalid_argument("refiner.layers must be >= 1");
  if (vocab_->config().dim != config_.dim)
    throw std::invalid_argument("refiner width must equal vocab.dim");
  const auto c = config_.dim;
  temporal_pos = register_parameter("temporal_pos",
                                    torch::randn({config_.max_trajectory + 1, c}) * 0.02);
  slot_pos = register_parameter("slot_pos", torch::randn({4, c}) * 0.02);
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < config_.layers; ++i)
    blocks->push_back(RefinerLayer(c, config_.heads, c * config_.ffn_ratio));
  norm_out = register_module("norm_out", make_layer_norm(c));
}

RefinerOutput BoxRefinerImpl::forward(const torch::Tensor& trajectory,
                                      const torch::Tensor& current,
                                      const torch::Tensor& image_tokens,
                                      std::int64_t layers) {
  if (layers < 0) layers = config_.layers;
  if (layers < 1 || layers > config_.layers)
    throw std::invalid_argument("refiner: layer count must be in [1, " +
                                std::to_string(config_.layers) + "]");
  if (!image_tokens.defined() || image_tokens.numel() == 0 || image_tokens.size(1) == 0)
    throw std::invalid_argument("refiner: empty image tokens");
  TORCH_CHECK(current.dim() == 3 && current.size(1) == 4, "refiner: current must be [B, 4, C]");

  const auto b = current.size(0);
  const auto c = config_.dim;
  std::int64_t k = 0;
  torch::Tensor seq = current;
  if (trajectory.defined() && trajectory.numel() > 0) {
    TORCH_CHECK(trajectory.dim() == 4 && trajectory.size(2) == 4,
                "refiner: trajectory must be [B, k, 4, C]");
    k = trajectory.size(1);
    if (k > config_.max_trajectory)
      throw std::invalid_argument("refiner: trajectory longer than capacity");
    seq = torch::cat({trajectory.reshape({b, 4 * k, c}), current}, 1);
  }
  const auto boxes = k + 1;
  // Right-aligned temporal index: the current box always takes the last row.
  auto temporal = temporal_pos.slice(0, config_.max_trajectory + 1 - boxes);
  auto pos = (temporal.unsqueeze(1) + slot_pos.unsqueeze(0)).reshape({4 * boxes, c});
  auto mask = build_mask(boxes).to(seq.device());

  for (std::int64_t i = 0; i < layers; ++i)
    seq = blocks[i]->as<RefinerLayerImpl>()->forward(seq, pos, mask, image_tokens);

  RefinerOutput out;
  out.sequence = seq;
  out.current = seq.slice(1, 4 * k);
  out.logits = vocab_->readout(norm_out(out.current));
  return out;
}

void BoxRefinerImpl::zero_output_projections() {
  for (auto& m : *blocks) m->as<RefinerLayerImpl>()->zero_output_projections();
}

}  // namespace detrack
