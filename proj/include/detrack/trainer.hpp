// SPDX-License-Identifier: Apache-2.0
//
// Three-stage training: (1) template/search pairs with noised ground-truth
// boxes, (2) sequential clip rollouts feeding predictions into the trajectory
// memory, (3) the quality head alone on rollouts of the frozen tracker.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "detrack/checkpoint.hpp"
#include "detrack/config.hpp"
#include "detrack/data_pipeline.hpp"
#include "detrack/model.hpp"
#include "detrack/noise_process.hpp"
#include "detrack/vocab_embedding.hpp"

namespace detrack {

struct LossWeights {
  double ce = 1.0;
  double siou = 1.0;
};

struct LossReport {
  double ce = 0.0;
  double siou = 0.0;
  double total = 0.0;
};

/// Differentiable loss terms, averaged over the batch.
struct LossTerms {
  torch::Tensor ce;
  torch::Tensor siou;
  torch::Tensor total;

  LossReport report() const;
};

/// SIoU on [N, 4] corner tensors; returns [N]. Mirrors siou_loss().
torch::Tensor siou_loss(const torch::Tensor& pred, const torch::Tensor& gt);

/// Expected box under the per-coordinate bin distributions, canonicalized.
/// logits [N, 4, B] -> [N, 4].
torch::Tensor softargmax_box(const torch::Tensor& logits);

/// logits [N, 4, B]; gt [N, 4] corners in [0, 1].
LossTerms compute_loss(const torch::Tensor& logits, const torch::Tensor& gt,
                       const LossWeights& weights = {});
LossReport compute_loss(const CoordLogits& logits, const BoundingBox& gt,
                        const LossWeights& weights = {});

struct TrainConfig {
  int stage = 1;
  int epochs = 20;
  int decay_epoch = 16;
  double decay_factor = 0.1;
  double lr_vit = 5e-4;
  double lr_refiner = 5e-4;
  double lr_scorer = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  int batch = 16;
  int samples_per_epoch = 6144;  // stage 1: pairs; stages 2 and 3: clips
  int clip_len = 8;
  LossWeights weights;
  bool teacher_forcing = false;
  bool fixed_t = false;
  std::uint64_t seed = 0;
  int log_every = 10;

  int steps_per_epoch() const;
  /// Learning-rate multiplier in effect during (0-based) `epoch`.
  double lr_scale(int epoch) const;
  void validate() const;
};

TrainConfig train_config(const Config& c, int stage);

struct LogEntry {
  std::int64_t step = 0;
  int epoch = 0;
  LossReport loss;
  double lr = 0.0;  // first group's learning rate
};

/// Progress snapshot handed to the epoch callback and restored on resume.
struct TrainProgress {
  int stage = 1;
  int epochs_done = 0;
  std::int64_t step = 0;
  std::string optimizer;  // serialized optimizer state
  std::string rng;        // serialized random engine
};

struct TrainHooks {
  std::ostream* log = nullptr;  // `step,epoch,ce,siou,total,lr` lines
  std::function<void(const TrainProgress&)> on_epoch_end;
  std::optional<TrainProgress> resume;
};

struct TrainResult {
  std::vector<LogEntry> history;  // every step
  std::int64_t steps = 0;
  TrainProgress progress;
};

TrainResult train_stage1(DeTrackModel& model, const TrainConfig& config,
                         const SampleOptions& samples, const NoiseSchedule& schedule,
                         const std::vector<AnnotatedSequence>& videos,
                         const TrainHooks& hooks = {});
TrainResult train_stage2(DeTrackModel& model, const TrainConfig& config,
                         const SampleOptions& samples, const NoiseSchedule& schedule,
                         const std::vector<AnnotatedSequence>& videos,
                         const TrainHooks& hooks = {});
TrainResult train_stage3(DeTrackModel& model, const TrainConfig& config,
                         const SampleOptions& samples,
                         const std::vector<AnnotatedSequence>& videos,
                         const TrainHooks& hooks = {});

/// Dispatch on config.stage.
TrainResult train_stage(DeTrackModel& model, const TrainConfig& config,
                        const SampleOptions& samples, const NoiseSchedule& schedule,
                        const std::vector<AnnotatedSequence>& videos,
                        const TrainHooks& hooks = {});

/// Switch libtorch into single-threaded deterministic execution.
void set_deterministic(bool on);

/// Model seeded from `seed` (parameter init draws from libtorch's generator).
DeTrackModel make_model(const ModelConfig& config, std::uint64_t seed);

Checkpoint make_checkpoint(const DeTrackModel& model, const Config& config,
                           const TrainProgress& progress);
/// Rebuild a model from a checkpoint's own configuration echo.
DeTrackModel model_from_checkpoint(const Checkpoint& ck);

}  // namespace detrack
