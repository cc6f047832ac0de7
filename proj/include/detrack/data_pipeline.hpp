// SPDX-License-Identifier: Apache-2.0
//
// Synthetic moving-object videos, GOT-10k style annotation files, and the
// crop pipeline that turns frames into template / search inputs.

#pragma once

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "detrack/geometry.hpp"

namespace detrack {

enum class ObjectShape { kRectangle, kEllipse, kRandom };

struct SyntheticVideoSpec {
  int frames = 40;
  int width = 128;
  int height = 128;
  ObjectShape shape = ObjectShape::kRandom;
  double min_size = 14.0;  // initial object side range, pixels
  double max_size = 30.0;
  double max_speed = 2.0;        // initial speed bound, px/frame
  double velocity_noise = 0.25;  // per-frame velocity perturbation (std, px)
  double scale_drift = 0.01;     // per-frame log-scale perturbation (std)
  double occluder_rate = 0.05;   // probability a frame is occluded
  std::uint64_t seed = 0;
  // Optional explicit kinematics (overrides the random draws).
  std::optional<PixelBox> initial_box;
  std::optional<std::array<double, 2>> velocity;

  void validate() const;
};

struct AnnotatedSequence {
  std::string name;
  std::vector<cv::Mat> frames;  // CV_8UC3
  std::vector<PixelBox> boxes;
  std::vector<bool> occluded;

  std::size_t size() const { return boxes.size(); }
  int width() const { return frames.empty() ? 0 : frames.front().cols; }
  int height() const { return frames.empty() ? 0 : frames.front().rows; }
};

AnnotatedSequence generate_synthetic(const SyntheticVideoSpec& spec);

/// Spec for video `index` of a corpus generated from `base_seed`.
SyntheticVideoSpec corpus_video_spec(std::uint64_t base_seed, int index, int frames,
                                     int frame_size);
std::vector<AnnotatedSequence> generate_corpus(std::uint64_t base_seed, int videos,
                                               int frames, int frame_size);

// --- annotation files -------------------------------------------------------

/// One "x,y,w,h" line per frame. Throws std::runtime_error naming the line on
/// malformed input.
std::vector<PixelBox> parse_annotations(const std::string& text, int frame_width,
                                        int frame_height);
std::vector<PixelBox> read_annotations(const std::filesystem::path& path, int frame_width,
                                       int frame_height);
std::string format_boxes(const std::vector<PixelBox>& boxes);
void write_predictions(const std::filesystem::path& path, const std::vector<PixelBox>& boxes);
void write_confidences(const std::filesystem::path& path, const std::vector<double>& values);

/// Frames as 00000001.png ..., plus groundtruth.txt and occlusion.label.
void write_sequence(const std::filesystem::path& dir, const AnnotatedSequence& seq);
AnnotatedSequence read_sequence(const std::filesystem::path& dir);

// --- crops ------------------------------------------------------------------

/// Maps between frame pixels and normalized crop coordinates.
struct CropTransform {
  PixelBox window;  // in frame pixels
  int out_size = 0;

  BoundingBox frame_to_crop(const PixelBox& box) const;
  PixelBox crop_to_frame(const BoundingBox& box) const;
};

struct Crop {
  cv::Mat image;  // out_size x out_size, CV_8UC3
  CropTransform transform;
  int padded_pixels = 0;  // output pixels sampled from outside the frame
};

/// Extract `window` (mean-colour padding outside the frame) and resize.
Crop make_crop(const cv::Mat& frame, const PixelBox& window, int out_size);

/// HWC uint8 -> [3, H, W] float, scaled to roughly zero mean / unit range.
torch::Tensor image_to_tensor(const cv::Mat& image);

// --- training samples --------------------------------------------------------

struct SampleOptions {
  int template_size = 32;
  int search_size = 64;
  double template_factor = 2.0;
  double search_factor = 4.0;
  double jitter = 0.3;  // relative centre shift and scale jitter of the search window
  int clip_len = 8;
};

struct SamplePair {
  std::vector<torch::Tensor> templates;  // [3, Hz, Wz] each
  torch::Tensor search;                  // [3, Hs, Ws]
  BoundingBox gt;                        // search-crop coordinates, clamped to [0, 1]
  int template_frame = 0;
  int search_frame = 0;
};

struct ClipFrame {
  torch::Tensor search;
  BoundingBox gt;
  CropTransform transform;
  PixelBox gt_frame;
  int index = 0;
};

struct SampleClip {
  std::vector<torch::Tensor> templates;
  std::vector<ClipFrame> frames;
};

enum class SampleStage { kPair, kSequential };

using TrainingSample = std::variant<SamplePair, SampleClip>;

PixelBox jitter_window(const PixelBox& box, double factor, double jitter, std::mt19937_64& rng);

SamplePair build_pair_sample(const AnnotatedSequence& seq, const SampleOptions& opts,
                             std::mt19937_64& rng);
SampleClip build_clip_sample(const AnnotatedSequence& seq, const SampleOptions& opts,
                             std::mt19937_64& rng);
TrainingSample build_training_sample(const AnnotatedSequence& seq, SampleStage stage,
                                     const SampleOptions& opts, std::mt19937_64& rng);

BoundingBox clamp_unit(const BoundingBox& b);

}  // namespace detrack
