// SPDX-License-Identifier: Apache-2.0

#include "detrack/vocab_embedding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "detrack/layers.hpp"

namespace detrack {

std::int64_t quantize(double x, std::int64_t bins) {
  if (bins < 2) throw std::invalid_argument("quantize: bins must be >= 2");
  if (std::isnan(x)) x = 0.0;
  const double scaled = std::clamp(x, 0.0, 1.0) * double(bins - 1);
  return std::clamp<std::int64_t>(std::int64_t(std::floor(scaled + 0.5)), 0, bins - 1);
}

double dequantize(std::int64_t token, std::int64_t bins) {
  if (bins < 2) throw std::invalid_argument("dequantize: bins must be >= 2");
  if (token < 0 || token >= bins)
    throw std::out_of_range("dequantize: token " + std::to_string(token) +
                            " outside [0, " + std::to_string(bins - 1) + "]");
  return double(token) / double(bins - 1);
}

BoxTokens quantize_box(const BoundingBox& b, std::int64_t bins) {
  return {quantize(b.x1, bins), quantize(b.y1, bins), quantize(b.x2, bins),
          quantize(b.y2, bins)};
}

BoxTokens quantize_box(const std::array<double, 4>& c, std::int64_t bins) {
  return {quantize(c[0], bins), quantize(c[1], bins), quantize(c[2], bins),
          quantize(c[3], bins)};
}

namespace {

// Unit-norm sin-cos code of the bin index: neighbouring bins start with
// similar rows, so coordinate order is visible to the readout from step one.
torch::Tensor ordinal_code(std::int64_t bins, std::int64_t dim) {
  auto code = torch::zeros({bins, dim});
  const std::int64_t half = dim / 2;
  for (std::int64_t b = 0; b < bins; ++b)
    for (std::int64_t i = 0; i < half; ++i) {
      const double freq = std::pow(double(bins), -double(i) / double(half));
      const double angle = double(b) * freq;
      code[b][2 * i] = std::sin(angle);
      code[b][2 * i + 1] = std::cos(angle);
    }
  return code / code.norm(2, 1, true).clamp_min(1e-12);
}

}  // namespace

VocabularyImpl::VocabularyImpl(const VocabConfig& config) : config_(config) {
  if (config.bins < 2) throw std::invalid_argument("vocab.bins must be >= 2");
  if (config.dim < 1) throw std::invalid_argument("vocab.dim must be >= 1");
  table = register_parameter("table", ordinal_code(config.bins, config.dim));
  output_table = config.tied ? table
                             : register_parameter("output_table", ordinal_code(config.bins, config.dim));
}

torch::Tensor VocabularyImpl::embed(const torch::Tensor& tokens) const {
  TORCH_CHECK(tokens.scalar_type() == torch::kInt64, "embed: tokens must be int64");
  if (tokens.numel() > 0) {
    const auto lo = tokens.min().item<std::int64_t>();
    const auto hi = tokens.max().item<std::int64_t>();
    if (lo < 0 || hi >= config_.bins)
      throw std::out_of_range("embed: invalid token");
  }
  auto flat = table.index_select(0, tokens.reshape({-1}));
  auto shape = tokens.sizes().vec();
  shape.push_back(config_.dim);
  return flat.view(shape);
}

torch::Tensor VocabularyImpl::embed_input(const torch::Tensor& tokens) const {
  return embed(tokens) * std::sqrt(double(config_.dim));
}

torch::Tensor VocabularyImpl::readout(const torch::Tensor& latent) const {
  TORCH_CHECK(latent.size(-1) == config_.dim, "readout: width mismatch");
  macs::add(latent.numel() * config_.bins);
  return torch::matmul(latent, output_table.t());
}

torch::Tensor tokens_tensor(const std::vector<BoxTokens>& tokens) {
  auto t = torch::empty({std::int64_t(tokens.size()), 4}, torch::kInt64);
  auto acc = t.accessor<std::int64_t, 2>();
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (int k = 0; k < 4; ++k) acc[i][k] = tokens[i][k];
  return t;
}

CoordLogits CoordLogits::from_logits(const torch::Tensor& logits) {
  TORCH_CHECK(logits.dim() == 2 && logits.size(0) == 4, "CoordLogits: expected [4, B]");
  return {logits, torch::softmax(logits, -1)};
}

namespace {

DecodedBox decode_rows(const torch::Tensor& probs) {
  // probs: [4, B] double on CPU
  const auto bins = probs.size(1);
  auto acc = probs.accessor<double, 2>();
  DecodedBox out;
  std::array<double, 4> coord{};
  double conf = 0.0;
  for (int k = 0; k < 4; ++k) {
    std::int64_t best = 0;
    double best_p = acc[k][0];
    for (std::int64_t b = 1; b < bins; ++b) {
      if (acc[k][b] > best_p) {
        best_p = acc[k][b];
        best = b;
      }
    }
    out.tokens[k] = best;
    coord[k] = dequantize(best, bins);
    conf += best_p;
  }
  out.box = canonicalize({coord[0], coord[1], coord[2], coord[3]});
  out.confidence = std::clamp(conf / 4.0, 0.0, 1.0);
  return out;
}

}  // namespace

DecodedBox decode_box(const CoordLogits& logits) {
  auto probs = logits.probs.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  return decode_rows(probs);
}

std::vector<DecodedBox> decode_boxes(const torch::Tensor& logits) {
  TORCH_CHECK(logits.dim() == 3 && logits.size(1) == 4, "decode_boxes: expected [N, 4, B]");
  auto probs = torch::softmax(logits.detach().to(torch::kCPU, torch::kFloat64), -1).contiguous();
  std::vector<DecodedBox> out;
  out.reserve(logits.size(0));
  for (std::int64_t i = 0; i < logits.size(0); ++i) out.push_back(decode_rows(probs[i]));
  return out;
}

}  // namespace detrack
