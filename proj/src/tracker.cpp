// SPDX-License-Identifier: Apache-2.0

#include "detrack/tracker.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "detrack/layers.hpp"
#include "detrack/vocab_embedding.hpp"

namespace detrack {

TrackerConfig tracker_config(const Config& c) {
  TrackerConfig t;
  t.template_size = int(c.get_int("data.template_size"));
  t.search_size = int(c.get_int("data.search_size"));
  t.template_factor = c.get_double("data.template_factor");
  t.search_factor = c.get_double("data.search_factor");
  t.memory = memory_config(c);
  t.multi_pass = int(c.get_int("track.multi_pass"));
  t.inference_t = int(c.get_int("noise.inference_t"));
  t.schedule = noise_schedule(c);
  t.seed = std::uint64_t(c.get_int("run.seed"));
  if (t.multi_pass < 1) throw std::invalid_argument("config key 'track.multi_pass': must be >= 1");
  if (t.inference_t < 0 || t.inference_t > t.schedule.t_max())
    throw std::invalid_argument("config key 'noise.inference_t': must be in [0, noise.T_max]");
  return t;
}

Tracker::Tracker(DeTrackModel model, TrackerConfig config)
    : model_(std::move(model)),
      config_(std::move(config)),
      state_{VisualMemory<torch::Tensor>(config_.memory), TrajectoryMemory(config_.memory.traj_len),
             {}, 0, {}},
      rng_(config_.seed) {
  if (config_.memory.traj_len > std::size_t(model_->config().refiner.max_trajectory))
    throw std::invalid_argument("memory.traj_len exceeds the refiner's trajectory capacity");
  if (config_.template_size != model_->config().vit.template_size ||
      config_.search_size != model_->config().vit.search_size)
    throw std::invalid_argument("tracker crop sizes do not match the model");
  model_->eval();
}

torch::Tensor Tracker::template_tensor(const cv::Mat& frame, const PixelBox& box) const {
  const auto window = crop_window(box, config_.template_factor);
  return image_to_tensor(make_crop(frame, window, config_.template_size).image);
}

void Tracker::init(const cv::Mat& frame, const PixelBox& box) {
  if (!(box.w > 0 && box.h > 0)) throw std::invalid_argument("init: degenerate box");
  state_ = TrackerState{VisualMemory<torch::Tensor>(config_.memory),
                        TrajectoryMemory(config_.memory.traj_len), box, 1, {}};
  state_.visual.initialize(template_tensor(frame, box), 1);
  state_.trajectory.push(to_normalized(box));
  rng_.seed(config_.seed);
}

TrackResult Tracker::track(const cv::Mat& frame) { return track_multipass(frame, config_.multi_pass); }

TrackResult Tracker::track_multipass(const cv::Mat& frame, int passes) {
  if (!state_.visual.initialized()) throw std::logic_error("tracker not initialized");
  if (passes < 1) throw std::invalid_argument("multi-pass count must be >= 1");
  torch::NoGradGuard no_grad;
  const auto bins = model_->config().vocab.bins;
  const std::int64_t t = state_.t + 1;

  const auto window = crop_window(state_.previous, config_.search_factor);
  const auto crop = make_crop(frame, window, config_.search_size);
  const auto& xf = crop.transform;

  BoundingBox input = clamp_unit(xf.frame_to_crop(state_.previous));
  if (config_.inference_t > 0) {
    GaussianStream normal(rng_);
    const auto noisy =
        add_noise({input.x1, input.y1, input.x2, input.y2}, config_.inference_t, config_.schedule,
                  normal);
    input = {noisy.x_noisy[0], noisy.x_noisy[1], noisy.x_noisy[2], noisy.x_noisy[3]};
  }
  BoxTokens tokens = quantize_box(input, bins);

  const auto views = state_.visual.templates_view();
  const auto templates = torch::stack(views).unsqueeze(0);
  const auto search = image_to_tensor(crop.image).unsqueeze(0);

  torch::Tensor trajectory;
  if (!state_.trajectory.empty()) {
    std::vector<BoxTokens> traj;
    for (const auto& b : state_.trajectory.boxes())
      traj.push_back(
          quantize_box(clamp_unit(xf.frame_to_crop(to_pixel(b, frame.cols, frame.rows))), bins));
    trajectory = tokens_tensor(traj).unsqueeze(0);
  }

  ModelOutput out;
  DecodedBox decoded;
  for (int pass = 0; pass < passes; ++pass) {
    out = model_->forward(templates, search, tokens_tensor({tokens}), trajectory);
    decoded = decode_boxes(out.refined.logits).front();
    tokens = decoded.tokens;
  }

  TrackResult r;
  r.frame = t;
  r.s2 = decoded.confidence;
  r.s1 = score(model_->scorer, out.vit.s, decoded.box);

  if (config_.record_blocks) {
    const auto counted = macs::value();
    for (std::size_t j = 1; j < out.vit.trace.states.size(); ++j) {
      const auto b = intermediate_decode(out.vit.trace, j, model_->vocab).front().box;
      r.block_boxes.push_back(clamp_to_frame(xf.crop_to_frame(b)));
    }
    macs::reset();
    macs::add(counted);
  }

  const auto candidate = clamp_to_frame(xf.crop_to_frame(decoded.box));
  const bool degenerate = !(decoded.box.area() > 0.0) || !(candidate.w > 0.0 && candidate.h > 0.0);
  if (degenerate) {
    r.box = state_.previous;
    r.fallback = true;
  } else {
    r.box = candidate;
    state_.previous = candidate;
    state_.trajectory.push(to_normalized(candidate));
    if (state_.visual.should_update(t, r.s1, r.s2)) {
      state_.visual.maybe_update(t, template_tensor(frame, candidate), r.s1, r.s2);
      state_.update_frames.push_back(t);
      r.template_updated = true;
    }
  }
  state_.t = t;
  return r;
}

SequencePrediction run_sequence(DeTrackModel model, const AnnotatedSequence& seq,
                                const TrackerConfig& config) {
  if (seq.size() == 0) throw std::invalid_argument("sequence " + seq.name + " has no frames");
  if (seq.frames.size() != seq.size())
    throw std::invalid_argument("sequence " + seq.name + ": frame and annotation counts differ");
  Tracker tracker(std::move(model), config);
  SequencePrediction pred;
  pred.name = seq.name;
  tracker.init(seq.frames[0], seq.boxes[0]);
  pred.boxes.push_back(seq.boxes[0]);
  pred.s1.push_back(1.0);
  pred.s2.push_back(1.0);
  pred.fallback.push_back(false);
  pred.block_boxes.emplace_back();
  for (std::size_t i = 1; i < seq.size(); ++i) {
    TrackResult r;
    try {
      r = tracker.track(seq.frames[i]);
    } catch (const std::exception& e) {
      throw std::runtime_error(seq.name + " frame " + std::to_string(i + 1) + ": " + e.what());
    }
    pred.boxes.push_back(r.box);
    pred.s1.push_back(r.s1);
    pred.s2.push_back(r.s2);
    pred.fallback.push_back(r.fallback);
    pred.block_boxes.push_back(std::move(r.block_boxes));
  }
  pred.update_frames = tracker.state().update_frames;
  return pred;
}

std::vector<std::vector<PixelBox>> block_tracks(const SequencePrediction& pred) {
  std::size_t blocks = 0;
  for (std::size_t i = 1; i < pred.block_boxes.size(); ++i)
    blocks = std::max(blocks, pred.block_boxes[i].size());
  std::vector<std::vector<PixelBox>> out(blocks);
  for (std::size_t j = 0; j < blocks; ++j) {
    out[j].push_back(pred.boxes.front());
    for (std::size_t i = 1; i < pred.block_boxes.size(); ++i) {
      if (pred.block_boxes[i].size() != blocks)
        throw std::logic_error("block boxes were not recorded for every frame");
      out[j].push_back(pred.block_boxes[i][j]);
    }
  }
  return out;
}

void write_prediction_files(const std::filesystem::path& dir, const SequencePrediction& pred) {
  std::filesystem::create_directories(dir);
  write_predictions(dir / (pred.name + ".txt"), pred.boxes);
  std::ofstream out(dir / (pred.name + "_scores.txt"));
  if (!out) throw std::runtime_error("cannot write " + (dir / (pred.name + "_scores.txt")).string());
  for (std::size_t i = 0; i < pred.boxes.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%d\n", pred.s1[i], pred.s2[i],
                  pred.fallback[i] ? 1 : 0);
    out << buf;
  }
}

}  // namespace detrack
