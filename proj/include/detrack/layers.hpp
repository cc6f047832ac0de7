// SPDX-License-Identifier: Apache-2.0
//
// Transformer building blocks shared by the denoising ViT, the box refiner and
// the quality head. Every dense product reports its multiply-accumulate count
// to a thread-local counter so forward cost can be measured per call.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>

namespace detrack {

/// Thread-local multiply-accumulate counter. Only dense products (linear
/// layers, attention score and mixing products) are counted.
namespace macs {
void add(std::int64_t n);
std::int64_t value();
void reset();
}  // namespace macs

/// Linear layer with Xavier-uniform weights and zero bias.
class DenseImpl : public torch::nn::Module {
 public:
  DenseImpl(std::int64_t in, std::int64_t out);
  torch::Tensor forward(const torch::Tensor& x) const;
  void zero_();

  std::int64_t in_features() const { return in_; }
  std::int64_t out_features() const { return out_; }

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  std::int64_t in_;
  std::int64_t out_;
};
TORCH_MODULE(Dense);

/// Multi-head scaled dot-product attention with separate query and key/value
/// inputs. `mask` (optional) is a [Nq, Nk] boolean tensor, true = may attend.
class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(std::int64_t dim, std::int64_t heads);

  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& kv,
                        const std::optional<torch::Tensor>& mask = std::nullopt,
                        torch::Tensor* weights_out = nullptr);

  Dense q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};

 private:
  std::int64_t dim_;
  std::int64_t heads_;
};
TORCH_MODULE(MultiHeadAttention);

class FeedForwardImpl : public torch::nn::Module {
 public:
  FeedForwardImpl(std::int64_t dim, std::int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

  Dense fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

torch::nn::LayerNorm make_layer_norm(std::int64_t dim);

std::int64_t parameter_count(const torch::nn::Module& module);

}  // namespace detrack
