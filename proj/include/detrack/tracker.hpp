// SPDX-License-Identifier: Apache-2.0
//
// Inference loop. Each frame: crop the search region around the previous box,
// feed the previous box (in search coordinates) as the ViT's box input, refine
// with the trajectory memory, decode, score, and update both memories.

#pragma once

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "detrack/compound_memory.hpp"
#include "detrack/config.hpp"
#include "detrack/data_pipeline.hpp"
#include "detrack/geometry.hpp"
#include "detrack/model.hpp"
#include "detrack/noise_process.hpp"

namespace detrack {

struct TrackerConfig {
  int template_size = 32;
  int search_size = 64;
  double template_factor = 2.0;
  double search_factor = 4.0;
  MemoryConfig memory;
  int multi_pass = 1;
  /// When > 0, the input box is noised at this timestep before tokenizing.
  int inference_t = 0;
  NoiseSchedule schedule = make_schedule(1000, 1e-4, 0.02);
  std::uint64_t seed = 0;
  /// Also decode every denoising block's box latent (step ablation).
  bool record_blocks = false;
};

TrackerConfig tracker_config(const Config& c);

struct TrackResult {
  PixelBox box;
  double s1 = 0.0;  // quality-head IoU estimate
  double s2 = 0.0;  // softmax confidence of the decoded box
  bool fallback = false;
  bool template_updated = false;
  std::int64_t frame = 0;
  std::vector<PixelBox> block_boxes;  // one per denoising block when recorded
};

struct TrackerState {
  VisualMemory<torch::Tensor> visual;
  TrajectoryMemory trajectory;  // frame-normalized boxes
  PixelBox previous;
  std::int64_t t = 0;
  std::vector<std::int64_t> update_frames;
};

class Tracker {
 public:
  /// The model is shared and must not be trained while tracking.
  Tracker(DeTrackModel model, TrackerConfig config);

  /// Throws std::invalid_argument on a zero-area box.
  void init(const cv::Mat& frame, const PixelBox& box);
  TrackResult track(const cv::Mat& frame);
  /// K full forward passes; each pass's decoded box is the next pass's input.
  TrackResult track_multipass(const cv::Mat& frame, int passes);

  const TrackerState& state() const { return state_; }
  const TrackerConfig& config() const { return config_; }

 private:
  torch::Tensor template_tensor(const cv::Mat& frame, const PixelBox& box) const;

  DeTrackModel model_;
  TrackerConfig config_;
  TrackerState state_;
  std::mt19937_64 rng_;
};

struct SequencePrediction {
  std::string name;
  std::vector<PixelBox> boxes;  // frame 1 echoes the initial box
  std::vector<double> s1;
  std::vector<double> s2;
  std::vector<bool> fallback;
  std::vector<std::vector<PixelBox>> block_boxes;  // per frame, per block
  std::vector<std::int64_t> update_frames;
};

SequencePrediction run_sequence(DeTrackModel model, const AnnotatedSequence& seq,
                                const TrackerConfig& config);

/// Per-block tracks (frame 1 echoes the initial box); needs record_blocks.
std::vector<std::vector<PixelBox>> block_tracks(const SequencePrediction& pred);

/// `<name>.txt` (x,y,w,h per frame) and `<name>_scores.txt` (s1,s2,fallback).
void write_prediction_files(const std::filesystem::path& dir, const SequencePrediction& pred);

}  // namespace detrack
