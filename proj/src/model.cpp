// SPDX-License-Identifier: Apache-2.0

#include "detrack/model.hpp"

#include <stdexcept>

namespace detrack {

void ModelConfig::sync() {
  vocab.dim = vit.dim;
  refiner.dim = vit.dim;
  refiner.heads = vit.heads;
  refiner.ffn_ratio = vit.ffn_ratio;
  quality.dim = vit.dim;
  quality.grid = vit.search_grid();
}

void ModelConfig::validate() const {
  vit.validate();
  if (vocab.dim != vit.dim) throw std::invalid_argument("vocab.dim must equal vit.dim");
  if (vocab.bins < 2) throw std::invalid_argument("vocab.bins must be >= 2");
  if (refiner.layers < 1) throw std::invalid_argument("refiner.layers must be >= 1");
}

ModelConfig preset_model(const std::string& name) {
  ModelConfig c;
  if (name == "desk" || name.empty()) {
    // defaults
  } else if (name == "detrack256" || name == "detrack384") {
    const bool large = name == "detrack384";
    c.vit.depth = 12;
    c.vit.dim = 768;
    c.vit.heads = 12;
    c.vit.patch = 16;
    c.vit.template_size = large ? 192 : 128;
    c.vit.search_size = large ? 384 : 256;
    c.vocab.bins = large ? 1200 : 800;
    c.quality.hidden = 256;
  } else {
    throw std::invalid_argument("unknown model preset '" + name + "'");
  }
  c.sync();
  return c;
}

DeTrackModelImpl::DeTrackModelImpl(const ModelConfig& config) : config_(config) {
  config_.sync();
  config_.validate();
  vocab = register_module("vocab", Vocabulary(config_.vocab));
  vit = register_module("vit", DenoisingVit(config_.vit, vocab));
  refiner = register_module("refiner", BoxRefiner(config_.refiner, vocab));
  scorer = register_module("scorer", QualityHead(config_.quality));
}

torch::Tensor DeTrackModelImpl::refiner_memory(const VitOutput& vit_out) const {
  return config_.refiner.use_template_kv ? torch::cat({vit_out.s, vit_out.z}, 1) : vit_out.s;
}

ModelOutput DeTrackModelImpl::forward(const torch::Tensor& templates, const torch::Tensor& search,
                                      const torch::Tensor& noisy_tokens,
                                      const torch::Tensor& trajectory_tokens,
                                      std::int64_t refiner_layers) {
  ModelOutput out;
  out.vit = vit->forward(templates, search, noisy_tokens);
  torch::Tensor traj;
  if (trajectory_tokens.defined() && trajectory_tokens.numel() > 0)
    traj = vocab->embed_input(trajectory_tokens);
  out.refined = refiner->forward(traj, out.vit.trace.states.back(), refiner_memory(out.vit),
                                 refiner_layers);
  return out;
}

namespace {

std::vector<torch::Tensor> collect(std::initializer_list<const torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (const auto* m : modules)
    for (auto& p : m->parameters()) out.push_back(p);
  return out;
}

}  // namespace

std::vector<torch::Tensor> DeTrackModelImpl::backbone_parameters() const {
  return collect({vocab.get(), vit.get()});
}

std::vector<torch::Tensor> DeTrackModelImpl::refiner_parameters() const {
  return collect({refiner.get()});
}

std::vector<torch::Tensor> DeTrackModelImpl::scorer_parameters() const {
  return collect({scorer.get()});
}

CostBreakdown analytic_macs(const ModelConfig& config, std::int64_t n_templates,
                            std::int64_t trajectory_boxes) {
  const auto& v = config.vit;
  const std::int64_t c = v.dim;
  const std::int64_t h = c * v.ffn_ratio;
  const std::int64_t nz = n_templates * v.tokens_per_template();
  const std::int64_t ns = v.search_tokens();
  const std::int64_t n = nz + ns;

  CostBreakdown cost;
  cost.vit = n * 3 * v.patch * v.patch * c;
  const std::int64_t image_block = 4 * n * c * c + 2 * n * n * c + 2 * n * c * h;
  cost.vit += v.depth * image_block;

  for (std::int64_t j = 0; j < v.depth; ++j) {
    if (v.block_mode == DenoiseBlockMode::kOff) break;
    std::int64_t block = 2 * 4 * c * c + 2 * ns * c * c + 2 * 4 * ns * c + 2 * 4 * c * h;
    const bool head = v.block_mode == DenoiseBlockMode::kFull &&
                      (v.noise_pred_mode == NoisePredMode::kPerBlock || j == v.depth - 1);
    if (head) block += 2 * 4 * c * c;
    cost.denoise += block;
  }

  const std::int64_t t = 4 * (trajectory_boxes + 1);
  const std::int64_t m = config.refiner.use_template_kv ? ns + nz : ns;
  const std::int64_t layer = 4 * t * c * c + 2 * t * t * c   // self attention
                             + 2 * t * c * c + 2 * m * c * c  // cross projections
                             + 2 * t * m * c                  // cross products
                             + 2 * t * c * h;                 // ffn
  cost.refiner = config.refiner.layers * layer;
  cost.readout = 4 * c * config.vocab.bins;
  cost.scorer = ns * c + (c + 4) * config.quality.hidden + config.quality.hidden;
  return cost;
}

}  // namespace detrack
