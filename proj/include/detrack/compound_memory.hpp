// SPDX-License-Identifier: Apache-2.0
//
// Compound memory: a visual memory (fixed template plus a FIFO of dynamic
// templates, updated under a frame-interval schedule and score gating) and a
// trajectory memory (FIFO of the most recent predicted boxes).

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "detrack/geometry.hpp"

namespace detrack {

enum class UpdateMode { kGated, kDirect };

UpdateMode parse_update_mode(const std::string& s);
std::string to_string(UpdateMode m);

struct MemoryConfig {
  std::size_t visual_len = 3;  // fixed + dynamic templates
  std::size_t traj_len = 7;
  double sigma1 = 0.75;  // quality (IoU) score threshold
  double sigma2 = 0.9;   // softmax confidence threshold
  UpdateMode update_mode = UpdateMode::kGated;
};

/// Frames between visual-memory updates: 5 up to t = 100, doubling every
/// 100 frames until t = 500, then 160.
std::int64_t update_interval(std::int64_t t);

class TrajectoryMemory {
 public:
  explicit TrajectoryMemory(std::size_t capacity = 7) : capacity_(capacity) {}

  void push(const BoundingBox& box) {
    if (capacity_ == 0) return;
    boxes_.push_back(box);
    while (boxes_.size() > capacity_) boxes_.pop_front();
  }
  void clear() { boxes_.clear(); }

  std::size_t size() const { return boxes_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return boxes_.empty(); }
  /// Oldest first.
  std::vector<BoundingBox> boxes() const { return {boxes_.begin(), boxes_.end()}; }

 private:
  std::size_t capacity_;
  std::deque<BoundingBox> boxes_;
};

/// Fixed template plus dynamic FIFO. `Crop` is any copyable template payload.
template <typename Crop>
class VisualMemory {
 public:
  explicit VisualMemory(const MemoryConfig& config = {}) : config_(config) {
    if (config_.visual_len < 1)
      throw std::invalid_argument("memory.visual_len must be >= 1");
  }

  void initialize(Crop fixed, std::int64_t frame) {
    fixed_ = std::move(fixed);
    dynamic_.clear();
    last_update_frame_ = frame;
  }

  bool initialized() const { return fixed_.has_value(); }
  std::size_t dynamic_capacity() const { return config_.visual_len - 1; }
  std::int64_t last_update_frame() const { return last_update_frame_; }
  const MemoryConfig& config() const { return config_; }

  /// Would a candidate at frame t with scores (s1, s2) be accepted?
  bool should_update(std::int64_t t, double s1, double s2) const {
    if (t - last_update_frame_ < update_interval(t)) return false;
    if (config_.update_mode == UpdateMode::kDirect) return true;
    return s1 > config_.sigma1 && s2 > config_.sigma2;
  }

  /// Push `candidate` into the dynamic FIFO if the schedule and gates allow.
  bool maybe_update(std::int64_t t, const Crop& candidate, double s1, double s2) {
    if (!initialized()) throw std::logic_error("visual memory not initialized");
    if (!should_update(t, s1, s2)) return false;
    last_update_frame_ = t;
    if (dynamic_capacity() == 0) return true;
    dynamic_.push_back(candidate);
    while (dynamic_.size() > dynamic_capacity()) dynamic_.pop_front();
    return true;
  }

  /// [fixed, dynamic oldest -> newest].
  std::vector<Crop> templates_view() const {
    if (!initialized()) throw std::logic_error("visual memory not initialized");
    std::vector<Crop> out;
    out.reserve(1 + dynamic_.size());
    out.push_back(*fixed_);
    out.insert(out.end(), dynamic_.begin(), dynamic_.end());
    return out;
  }

  std::size_t size() const { return initialized() ? 1 + dynamic_.size() : 0; }

 private:
  MemoryConfig config_;
  std::optional<Crop> fixed_;
  std::deque<Crop> dynamic_;
  std::int64_t last_update_frame_ = 0;
};

}  // namespace detrack
