// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "detrack/tracker.hpp"
#include "detrack/trainer.hpp"

using namespace detrack;
namespace fs = std::filesystem;

namespace {

Config tiny_config() {
  auto c = Config::defaults();
  c.set("vit.depth", "2");
  c.set("vit.dim", "32");
  c.set("vocab.dim", "32");
  c.set("vit.heads", "2");
  c.set("refiner.layers", "2");
  c.set("iounet.hidden", "8");
  return c;
}

AnnotatedSequence video(int frames, std::uint64_t seed = 4) {
  SyntheticVideoSpec spec;
  spec.frames = frames;
  spec.seed = seed;
  return generate_synthetic(spec);
}

// Residual branches and position offsets zeroed: every block passes the box
// embedding through, so the decoded box is the input box and nothing falls back.
DeTrackModel identity_model(const Config& c) {
  auto model = make_model(model_config(c), 0);
  torch::NoGradGuard guard;
  for (auto& p : model->named_parameters()) {
    const auto& k = p.key();
    const bool residual = k.find(".out.") != std::string::npos ||
                          k.find("fc2.") != std::string::npos;
    const bool offset = k.find("box_slot") != std::string::npos ||
                        k.find("slot_pos") != std::string::npos ||
                        k.find("temporal_pos") != std::string::npos;
    const bool branch = k.rfind("vit.denoise_blocks.", 0) == 0 || k.rfind("refiner.", 0) == 0;
    if ((branch && residual) || offset) p.value().zero_();
  }
  return model;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("init seeds both memories", "[tracker]") {
  auto c = tiny_config();
  auto model = make_model(model_config(c), 0);
  Tracker tracker(model, tracker_config(c));
  auto seq = video(3);
  tracker.init(seq.frames[0], seq.boxes[0]);
  CHECK(tracker.state().visual.templates_view().size() == 1);
  REQUIRE(tracker.state().trajectory.size() == 1);
  const auto b = tracker.state().trajectory.boxes()[0];
  const auto n = to_normalized(seq.boxes[0]);
  CHECK(b.x1 == n.x1);
  CHECK(b.y2 == n.y2);
  CHECK(tracker.state().t == 1);
  CHECK_THROWS(tracker.init(seq.frames[0], PixelBox{5, 5, 0, 10, 128, 128}));
}

TEST_CASE("tracking is deterministic and K = 1 is the single pass", "[tracker]") {
  auto c = tiny_config();
  auto model = make_model(model_config(c), 0);
  auto seq = video(4);
  Tracker a(model, tracker_config(c)), b(model, tracker_config(c));
  a.init(seq.frames[0], seq.boxes[0]);
  b.init(seq.frames[0], seq.boxes[0]);
  for (int i = 1; i < 4; ++i) {
    auto ra = a.track(seq.frames[i]);
    auto rb = b.track_multipass(seq.frames[i], 1);
    CHECK(ra.box == rb.box);
    CHECK(ra.s1 == rb.s1);
    CHECK(ra.s2 == rb.s2);
  }
  CHECK_THROWS(a.track_multipass(seq.frames[1], 0));
}

TEST_CASE("multi-pass cost is linear in K", "[tracker]") {
  auto c = tiny_config();
  auto model = make_model(model_config(c), 0);
  auto seq = video(2);
  std::vector<double> cost;
  for (int k : {1, 2, 4}) {
    Tracker t(model, tracker_config(c));
    t.init(seq.frames[0], seq.boxes[0]);
    macs::reset();
    t.track_multipass(seq.frames[1], k);
    cost.push_back(double(macs::value()));
  }
  CHECK(std::abs(cost[1] / cost[0] - 2.0) < 0.02);
  CHECK(std::abs(cost[2] / cost[0] - 4.0) < 0.04);
}

TEST_CASE("memories follow their schedules", "[tracker]") {
  auto c = tiny_config();
  c.set("memory.update_mode", "direct");
  auto model = identity_model(c);
  auto seq = video(30);
  Tracker tracker(model, tracker_config(c));
  tracker.init(seq.frames[0], seq.boxes[0]);
  std::vector<PixelBox> outputs{seq.boxes[0]};
  for (int i = 1; i < 30; ++i) {
    auto r = tracker.track(seq.frames[i]);
    CHECK(std::isfinite(r.box.x));
    CHECK(r.box.x >= 0);
    CHECK(r.box.y >= 0);
    CHECK(r.box.x + r.box.w <= 128 + 1e-9);
    CHECK(r.box.y + r.box.h <= 128 + 1e-9);
    if (!r.fallback) outputs.push_back(r.box);
    const auto traj = tracker.state().trajectory.boxes();
    CHECK(traj.size() == std::min<std::size_t>(7, outputs.size()));
    const auto newest = to_normalized(outputs.back());
    CHECK(traj.back().x1 == newest.x1);
  }
  // direct mode: an update whenever the interval (5) has elapsed
  CHECK(outputs.size() == 30);
  CHECK(tracker.state().update_frames == std::vector<std::int64_t>{6, 11, 16, 21, 26});
  CHECK(tracker.state().visual.templates_view().size() == 3);
}

TEST_CASE("degenerate decode falls back to the previous box", "[tracker]") {
  auto c = tiny_config();
  auto model = make_model(model_config(c), 0);
  {
    torch::NoGradGuard g;
    model->refiner->norm_out->weight.zero_();
    model->refiner->norm_out->bias.zero_();
  }
  auto seq = video(3);
  Tracker tracker(model, tracker_config(c));
  tracker.init(seq.frames[0], seq.boxes[0]);
  auto r = tracker.track(seq.frames[1]);
  CHECK(r.fallback);
  CHECK(r.box == seq.boxes[0]);
  CHECK(tracker.state().trajectory.size() == 1);
}

TEST_CASE("run_sequence output files", "[tracker]") {
  auto c = tiny_config();
  auto model = make_model(model_config(c), 0);
  auto seq = video(6);
  seq.name = "clip";
  auto cfg = tracker_config(c);
  auto a = run_sequence(model, seq, cfg);
  CHECK(a.boxes.size() == 6);
  CHECK(a.boxes[0] == seq.boxes[0]);
  const auto dir = fs::temp_directory_path() / "detrack_test_run_sequence";
  fs::remove_all(dir);
  write_prediction_files(dir / "a", a);
  write_prediction_files(dir / "b", run_sequence(model, seq, cfg));
  const auto text = slurp(dir / "a" / "clip.txt");
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
  CHECK(text == slurp(dir / "b" / "clip.txt"));
  CHECK(slurp(dir / "a" / "clip_scores.txt") == slurp(dir / "b" / "clip_scores.txt"));
  fs::remove_all(dir);
}

TEST_CASE("per-block boxes are recorded on request", "[tracker]") {
  auto c = tiny_config();
  auto model = make_model(model_config(c), 0);
  auto cfg = tracker_config(c);
  cfg.record_blocks = true;
  auto pred = run_sequence(model, video(4), cfg);
  auto tracks = block_tracks(pred);
  REQUIRE(tracks.size() == 2);
  CHECK(tracks[0].size() == 4);
}

TEST_CASE("tracker rejects mismatched configuration", "[tracker]") {
  auto c = tiny_config();
  auto model = make_model(model_config(c), 0);
  auto cfg = tracker_config(c);
  cfg.search_size = 128;
  CHECK_THROWS(Tracker(model, cfg));
  cfg = tracker_config(c);
  cfg.memory.traj_len = 9;
  CHECK_THROWS(Tracker(model, cfg));
  c.set("track.multi_pass", "0");
  CHECK_THROWS(tracker_config(c));
}
