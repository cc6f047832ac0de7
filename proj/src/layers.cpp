// SPDX-License-Identifier: Apache-2.0

#include "detrack/layers.hpp"

#include <cmath>

namespace detrack {

namespace macs {
namespace {
thread_local std::int64_t counter = 0;
}
void add(std::int64_t n) { counter += n; }
std::int64_t value() { return counter; }
void reset() { counter = 0; }
}  // namespace macs

DenseImpl::DenseImpl(std::int64_t in, std::int64_t out) : in_(in), out_(out) {
  // Xavier-uniform; at narrow widths a 0.02 normal init leaves attention
  // logits near zero and localization never gets off the ground.
  const double bound = std::sqrt(6.0 / double(in + out));
  weight = register_parameter("weight", torch::empty({out, in}).uniform_(-bound, bound));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor DenseImpl::forward(const torch::Tensor& x) const {
  macs::add(x.numel() / in_ * in_ * out_);
  return torch::nn::functional::linear(x, weight, bias);
}

void DenseImpl::zero_() {
  torch::NoGradGuard guard;
  weight.zero_();
  bias.zero_();
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(std::int64_t dim, std::int64_t heads)
    : dim_(dim), heads_(heads) {
  TORCH_CHECK(heads > 0 && dim % heads == 0, "attention: dim ", dim,
              " not divisible by heads ", heads);
  q = register_module("q", Dense(dim, dim));
  k = register_module("k", Dense(dim, dim));
  v = register_module("v", Dense(dim, dim));
  out = register_module("out", Dense(dim, dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query,
                                              const torch::Tensor& kv,
                                              const std::optional<torch::Tensor>& mask,
                                              torch::Tensor* weights_out) {
  TORCH_CHECK(query.dim() == 3 && kv.dim() == 3, "attention expects [B, N, C]");
  TORCH_CHECK(query.size(2) == dim_ && kv.size(2) == dim_,
              "attention: width mismatch");
  const auto b = query.size(0);
  const auto nq = query.size(1);
  const auto nk = kv.size(1);
  const auto head_dim = dim_ / heads_;

  auto split = [&](const torch::Tensor& t, std::int64_t n) {
    return t.view({b, n, heads_, head_dim}).transpose(1, 2);
  };
  auto qh = split(q(query), nq);
  auto kh = split(k(kv), nk);
  auto vh = split(v(kv), nk);

  auto scores = torch::matmul(qh, kh.transpose(-2, -1)) /
                std::sqrt(static_cast<double>(head_dim));
  macs::add(b * nq * nk * dim_);
  if (mask) {
    TORCH_CHECK(mask->size(0) == nq && mask->size(1) == nk, "attention: mask shape");
    scores = scores.masked_fill(mask->logical_not(),
                                -std::numeric_limits<double>::infinity());
  }
  auto weights = torch::softmax(scores, -1);
  if (weights_out) *weights_out = weights;
  auto mixed = torch::matmul(weights, vh);
  macs::add(b * nq * nk * dim_);
  return out(mixed.transpose(1, 2).reshape({b, nq, dim_}));
}

FeedForwardImpl::FeedForwardImpl(std::int64_t dim, std::int64_t hidden) {
  fc1 = register_module("fc1", Dense(dim, hidden));
  fc2 = register_module("fc2", Dense(hidden, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
  return fc2(torch::gelu(fc1(x)));
}

torch::nn::LayerNorm make_layer_norm(std::int64_t dim) {
  return torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6));
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace detrack
