// SPDX-License-Identifier: Apache-2.0

#include "detrack/denoising_vit.hpp"

#include <cmath>
#include <stdexcept>

namespace detrack {

namespace {

/// Fixed 2D sin-cos table [side * side, dim], row-major over the patch grid.
/// Half the channels encode the column, half the row.
torch::Tensor sincos_grid(std::int64_t side, std::int64_t dim) {
  auto out = torch::zeros({side * side, dim});
  const std::int64_t quarter = dim / 4;
  auto acc = out.accessor<float, 2>();
  for (std::int64_t r = 0; r < side; ++r)
    for (std::int64_t c = 0; c < side; ++c)
      for (std::int64_t i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -double(i) / double(std::max<std::int64_t>(quarter, 1)));
        const auto row = r * side + c;
        acc[row][i] = float(std::sin(c * freq));
        acc[row][quarter + i] = float(std::cos(c * freq));
        acc[row][2 * quarter + i] = float(std::sin(r * freq));
        acc[row][3 * quarter + i] = float(std::cos(r * freq));
      }
  return out;
}

}  // namespace

NoisePredMode parse_noise_pred_mode(const std::string& s) {
  if (s == "per_block") return NoisePredMode::kPerBlock;
  if (s == "total") return NoisePredMode::kTotal;
  throw std::invalid_argument("unknown noise_pred_mode '" + s + "'");
}

std::string to_string(NoisePredMode m) {
  return m == NoisePredMode::kPerBlock ? "per_block" : "total";
}

DenoiseBlockMode parse_denoise_block_mode(const std::string& s) {
  if (s == "full") return DenoiseBlockMode::kFull;
  if (s == "attention_only") return DenoiseBlockMode::kAttentionOnly;
  if (s == "off") return DenoiseBlockMode::kOff;
  throw std::invalid_argument("unknown denoise block mode '" + s + "'");
}

std::string to_string(DenoiseBlockMode m) {
  switch (m) {
    case DenoiseBlockMode::kFull: return "full";
    case DenoiseBlockMode::kAttentionOnly: return "attention_only";
    case DenoiseBlockMode::kOff: return "off";
  }
  return "full";
}

std::int64_t VitConfig::tokens_per_template() const {
  return (template_size / patch) * (template_size / patch);
}

std::int64_t VitConfig::search_tokens() const {
  return (search_size / patch) * (search_size / patch);
}

void VitConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("vit.depth must be >= 1");
  if (dim < 1 || heads < 1 || dim % heads != 0)
    throw std::invalid_argument("vit.dim must be a positive multiple of vit.heads");
  if (patch < 1 || template_size % patch != 0 || search_size % patch != 0)
    throw std::invalid_argument("image sizes must be multiples of vit.patch");
  if (ffn_ratio < 1) throw std::invalid_argument("vit.ffn_ratio must be >= 1");
}

// ---------------------------------------------------------------------------

ImageAttentionBlockImpl::ImageAttentionBlockImpl(std::int64_t dim, std::int64_t heads,
                                                 std::int64_t hidden) {
  norm1 = register_module("norm1", make_layer_norm(dim));
  attn = register_module("attn", MultiHeadAttention(dim, heads));
  norm2 = register_module("norm2", make_layer_norm(dim));
  mlp = register_module("mlp", FeedForward(dim, hidden));
}

std::pair<torch::Tensor, torch::Tensor> ImageAttentionBlockImpl::forward(
    const torch::Tensor& z, const torch::Tensor& s, torch::Tensor* weights_out) {
  if (z.size(-1) != s.size(-1))
    throw std::invalid_argument("image attention: template/search width mismatch");
  const auto n_s = s.size(1);
  auto x = torch::cat({s, z}, 1);
  auto h = norm1(x);
  x = x + attn(h, h, std::nullopt, weights_out);
  x = x + mlp(norm2(x));
  auto parts = x.split_with_sizes({n_s, x.size(1) - n_s}, 1);
  return {parts[1], parts[0]};
}

void ImageAttentionBlockImpl::zero_output_projections() {
  attn->out->zero_();
  mlp->fc2->zero_();
}

// ---------------------------------------------------------------------------

DenoisingBlockImpl::DenoisingBlockImpl(std::int64_t dim, std::int64_t heads,
                                       std::int64_t hidden, DenoiseBlockMode mode,
                                       bool has_noise_pred)
    : mode_(mode),
      has_noise_pred_(has_noise_pred && mode == DenoiseBlockMode::kFull) {
  if (mode_ == DenoiseBlockMode::kOff) return;
  norm_q = register_module("norm_q", make_layer_norm(dim));
  norm_kv = register_module("norm_kv", make_layer_norm(dim));
  attn = register_module("attn", MultiHeadAttention(dim, heads));
  norm_ffn = register_module("norm_ffn", make_layer_norm(dim));
  ffn = register_module("ffn", FeedForward(dim, hidden));
  if (has_noise_pred_) {
    noise_fc1 = register_module("noise_fc1", Dense(dim, dim));
    noise_fc2 = register_module("noise_fc2", Dense(dim, dim));
  }
}

DenoiseStep DenoisingBlockImpl::forward(const torch::Tensor& s, const torch::Tensor& x) {
  if (mode_ == DenoiseBlockMode::kOff) return {x, torch::zeros_like(x), x};
  auto x1 = attn(norm_q(x), norm_kv(s)) + x;
  auto x2 = x1 + ffn(norm_ffn(x1));
  auto eps = has_noise_pred_ ? noise_fc2(torch::relu(noise_fc1(x2))) : torch::zeros_like(x2);
  return {x2 - eps, eps, x2};
}

void DenoisingBlockImpl::zero_residual_branches() {
  if (mode_ == DenoiseBlockMode::kOff) return;
  attn->out->zero_();
  ffn->fc2->zero_();
}

void DenoisingBlockImpl::zero_noise_pred() {
  if (!has_noise_pred_) return;
  noise_fc1->zero_();
  noise_fc2->zero_();
}

// ---------------------------------------------------------------------------

DenoisingVitImpl::DenoisingVitImpl(const VitConfig& config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  if (vocab_->config().dim != config_.dim)
    throw std::invalid_argument("vocab.dim must equal vit.dim");
  const auto c = config_.dim;
  const auto hidden = c * config_.ffn_ratio;
  patch_embed = register_module("patch_embed", Dense(3 * config_.patch * config_.patch, c));
  // Learned, but started from a sin-cos grid so position is visible next to
  // patch content from the first step.
  template_pos = register_parameter("template_pos",
                                    sincos_grid(config_.template_size / config_.patch, c));
  search_pos = register_parameter("search_pos", sincos_grid(config_.search_grid(), c));
  box_slot = register_parameter("box_slot", torch::randn({4, c}) * 0.02);
  image_blocks = register_module("image_blocks", torch::nn::ModuleList());
  denoise_blocks = register_module("denoise_blocks", torch::nn::ModuleList());
  for (std::int64_t j = 0; j < config_.depth; ++j) {
    image_blocks->push_back(ImageAttentionBlock(c, config_.heads, hidden));
    const bool head = config_.noise_pred_mode == NoisePredMode::kPerBlock ||
                      j == config_.depth - 1;
    denoise_blocks->push_back(
        DenoisingBlock(c, config_.heads, hidden, config_.block_mode, head));
  }
  norm_out = register_module("norm_out", make_layer_norm(c));
}

torch::Tensor DenoisingVitImpl::embed_images(const torch::Tensor& images) const {
  TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "expected [B, 3, H, W] images");
  const auto p = config_.patch;
  const auto b = images.size(0);
  const auto gh = images.size(2) / p;
  const auto gw = images.size(3) / p;
  TORCH_CHECK(gh * p == images.size(2) && gw * p == images.size(3),
              "image size must be a multiple of the patch size");
  // [B, 3, gh, p, gw, p] -> [B, gh, gw, 3, p, p] -> [B, N, 3 p p]
  auto patches = images.reshape({b, 3, gh, p, gw, p})
                     .permute({0, 2, 4, 1, 3, 5})
                     .reshape({b, gh * gw, 3 * p * p});
  return patch_embed->forward(patches);
}

torch::Tensor DenoisingVitImpl::embed_templates(const torch::Tensor& templates) const {
  TORCH_CHECK(templates.dim() == 5, "templates must be [B, n, 3, H, W]");
  const auto b = templates.size(0);
  const auto n = templates.size(1);
  if (templates.size(3) != config_.template_size || templates.size(4) != config_.template_size)
    throw std::invalid_argument("template size does not match vit config");
  auto tok = embed_images(templates.reshape({b * n, 3, templates.size(3), templates.size(4)}));
  if (config_.template_pos) tok = tok + template_pos;
  return tok.reshape({b, n * config_.tokens_per_template(), config_.dim});
}

torch::Tensor DenoisingVitImpl::embed_search(const torch::Tensor& search) const {
  if (search.size(2) != config_.search_size || search.size(3) != config_.search_size)
    throw std::invalid_argument("search size does not match vit config");
  return embed_images(search) + search_pos;
}

torch::Tensor DenoisingVitImpl::embed_box(const torch::Tensor& tokens) const {
  TORCH_CHECK(tokens.dim() == 2 && tokens.size(1) == 4, "box tokens must be [B, 4]");
  return vocab_->embed_input(tokens) + box_slot;
}

VitOutput DenoisingVitImpl::forward(const torch::Tensor& templates, const torch::Tensor& search,
                                    const torch::Tensor& noisy_tokens) {
  if (templates.size(0) != search.size(0) || search.size(0) != noisy_tokens.size(0))
    throw std::invalid_argument("batch size mismatch between templates, search and boxes");
  return forward_tokens(embed_templates(templates), embed_search(search),
                        embed_box(noisy_tokens));
}

VitOutput DenoisingVitImpl::forward_tokens(torch::Tensor z, torch::Tensor s, torch::Tensor box) {
  if (z.size(-1) != config_.dim || s.size(-1) != config_.dim || box.size(-1) != config_.dim)
    throw std::invalid_argument("token width does not match vit.dim");
  if (box.dim() != 3 || box.size(1) != 4)
    throw std::invalid_argument("box latent must be [B, 4, C]");
  VitOutput out;
  auto& trace = out.trace;
  trace.states.push_back(box);
  for (std::int64_t j = 0; j < config_.depth; ++j) {
    std::tie(z, s) = image_blocks[j]->as<ImageAttentionBlockImpl>()->forward(z, s);
    auto step = denoise_blocks[j]->as<DenoisingBlockImpl>()->forward(s, trace.states.back());
    trace.states.push_back(step.next);
    trace.eps.push_back(step.eps);
    trace.refined.push_back(step.refined);
  }
  out.z = norm_out(z);
  out.s = norm_out(s);
  return out;
}

void DenoisingVitImpl::zero_residual_branches() {
  for (auto& m : *denoise_blocks) m->as<DenoisingBlockImpl>()->zero_residual_branches();
}

std::vector<DecodedBox> intermediate_decode(const DenoiseTrace& trace, std::size_t j,
                                            const Vocabulary& vocab) {
  if (j >= trace.states.size())
    throw std::out_of_range("intermediate_decode: block index out of range");
  torch::NoGradGuard guard;
  return decode_boxes(vocab->readout(trace.states[j]));
}

}  // namespace detrack
