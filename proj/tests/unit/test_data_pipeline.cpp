// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "detrack/data_pipeline.hpp"

using namespace detrack;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

bool same_frames(const AnnotatedSequence& a, const AnnotatedSequence& b) {
  if (a.frames.size() != b.frames.size()) return false;
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    if (cv::norm(a.frames[i], b.frames[i], cv::NORM_INF) != 0) return false;
  return true;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("detrack_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic", "[data]") {
  SyntheticVideoSpec spec;
  spec.frames = 12;
  spec.seed = 17;
  auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(same_frames(a, b));
  REQUIRE(a.boxes.size() == 12);
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    CHECK(a.boxes[i].x == b.boxes[i].x);
    CHECK(a.boxes[i].w == b.boxes[i].w);
    CHECK(a.boxes[i].w * a.boxes[i].h >= 1.0);
  }
  spec.seed = 18;
  CHECK_FALSE(same_frames(a, generate_synthetic(spec)));
}

TEST_CASE("static object keeps a constant box", "[data]") {
  SyntheticVideoSpec spec;
  spec.frames = 10;
  spec.initial_box = PixelBox{30, 40, 20, 16, 128, 128};
  spec.velocity = std::array<double, 2>{0.0, 0.0};
  spec.velocity_noise = 0;
  spec.scale_drift = 0;
  auto seq = generate_synthetic(spec);
  for (const auto& b : seq.boxes) {
    CHECK(b.x == 30);
    CHECK(b.y == 40);
    CHECK(b.w == 20);
    CHECK(b.h == 16);
  }
}

TEST_CASE("constant velocity kinematics", "[data]") {
  SyntheticVideoSpec spec;
  spec.frames = 6;
  spec.initial_box = PixelBox{10, 10, 20, 20, 128, 128};
  spec.velocity = std::array<double, 2>{2.0, 1.0};
  spec.velocity_noise = 0;
  spec.scale_drift = 0;
  auto seq = generate_synthetic(spec);
  CHECK(seq.boxes[5].x == Approx(20.0));
  CHECK(seq.boxes[5].y == Approx(15.0));
}

TEST_CASE("degenerate specs are rejected", "[data]") {
  SyntheticVideoSpec spec;
  spec.frames = 0;
  CHECK_THROWS(generate_synthetic(spec));
  spec = {};
  spec.min_size = 40;
  spec.max_size = 20;
  CHECK_THROWS(generate_synthetic(spec));
  spec = {};
  spec.occluder_rate = 1.5;
  CHECK_THROWS(generate_synthetic(spec));
}

TEST_CASE("annotation parsing", "[data]") {
  auto boxes = parse_annotations("10,20,30,40\n", 128, 128);
  REQUIRE(boxes.size() == 1);
  CHECK(boxes[0].x == 10);
  CHECK(boxes[0].y == 20);
  CHECK(boxes[0].w == 30);
  CHECK(boxes[0].h == 40);
  CHECK(parse_annotations("1.5,-2,3e1,4.25\n2,3,4,5", 64, 64).size() == 2);
  CHECK_THROWS_WITH(parse_annotations("10,20,30\n", 128, 128),
                    Catch::Matchers::ContainsSubstring("line 1"));
  CHECK_THROWS_WITH(parse_annotations("1,2,3,4\n1,2,x,4\n", 128, 128),
                    Catch::Matchers::ContainsSubstring("line 2"));
  CHECK_THROWS(parse_annotations("1,2,3,4,5\n", 128, 128));
  CHECK_THROWS(parse_annotations("1,2,,4\n", 128, 128));
  CHECK_THROWS(parse_annotations("1, 2,3,4\n", 128, 128));
  CHECK_THROWS(parse_annotations("1,2,-3,4\n", 128, 128));
  CHECK_THROWS(parse_annotations("nan,2,3,4\n", 128, 128));
}

TEST_CASE("prediction files round trip", "[data][property]") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::vector<PixelBox> boxes;
  for (int i = 0; i < 200; ++i) boxes.push_back({u(rng), u(rng), u(rng), u(rng), 128, 128});
  const auto dir = scratch_dir("roundtrip");
  write_predictions(dir / "p.txt", boxes);
  const auto back = read_annotations(dir / "p.txt", 128, 128);
  REQUIRE(back.size() == boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    CHECK(std::abs(back[i].x - boxes[i].x) <= 1e-4);
    CHECK(std::abs(back[i].h - boxes[i].h) <= 1e-4);
  }
  fs::remove_all(dir);
}

TEST_CASE("sequence directories round trip", "[data]") {
  SyntheticVideoSpec spec;
  spec.frames = 5;
  spec.seed = 3;
  auto seq = generate_synthetic(spec);
  const auto dir = scratch_dir("seq");
  write_sequence(dir, seq);
  auto back = read_sequence(dir);
  CHECK(same_frames(seq, back));
  REQUIRE(back.boxes.size() == 5);
  CHECK(back.boxes[3].x == Approx(seq.boxes[3].x).margin(1e-4));
  CHECK(back.occluded == seq.occluded);

  std::ofstream(dir / "groundtruth.txt") << "1,2,3,4\n";
  CHECK_THROWS(read_sequence(dir));
  fs::remove_all(dir);
}

TEST_CASE("crops", "[data]") {
  cv::Mat frame(100, 100, CV_8UC3, cv::Scalar(10, 20, 30));
  auto inside = make_crop(frame, PixelBox{10, 10, 40, 40, 100, 100}, 32);
  CHECK(inside.padded_pixels == 0);
  CHECK(inside.image.rows == 32);

  cv::Mat noisy(100, 100, CV_8UC3);
  cv::randu(noisy, 0, 255);
  auto outside = make_crop(noisy, PixelBox{300, 300, 40, 40, 100, 100}, 16);
  CHECK(outside.padded_pixels == 256);
  const auto mean = cv::mean(noisy);
  const auto center = outside.image.at<cv::Vec3b>(8, 8);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(center[c] - mean[c]) <= 1.0);
  CHECK_THROWS(make_crop(frame, PixelBox{0, 0, 0, 10, 100, 100}, 16));
}

TEST_CASE("crop transforms invert", "[data][property]") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    CropTransform xf{{u(rng) * 100 - 20, u(rng) * 100 - 20, 5 + 80 * u(rng), 5 + 80 * u(rng), 128, 128},
                     64};
    BoundingBox b = canonicalize({u(rng), u(rng), u(rng), u(rng)});
    const auto back = xf.frame_to_crop(xf.crop_to_frame(b));
    CHECK(std::abs(back.x1 - b.x1) < 1e-6);
    CHECK(std::abs(back.y2 - b.y2) < 1e-6);
  }
}

TEST_CASE("training samples", "[data]") {
  SyntheticVideoSpec spec;
  spec.frames = 2;
  spec.seed = 9;
  auto two = generate_synthetic(spec);
  SampleOptions opts;
  std::mt19937_64 rng(1);
  auto pair = build_pair_sample(two, opts, rng);
  CHECK(pair.template_frame == 0);
  CHECK(pair.search_frame == 1);
  CHECK(pair.templates.front().sizes() == torch::IntArrayRef({3, 32, 32}));
  CHECK(pair.search.sizes() == torch::IntArrayRef({3, 64, 64}));

  spec.frames = 20;
  auto seq = generate_synthetic(spec);
  auto clip = std::get<SampleClip>(build_training_sample(seq, SampleStage::kSequential, opts, rng));
  REQUIRE(clip.frames.size() == 8);
  for (std::size_t k = 1; k < clip.frames.size(); ++k)
    CHECK(clip.frames[k].index == clip.frames[k - 1].index + 1);

  spec.frames = 1;
  CHECK_THROWS(build_pair_sample(generate_synthetic(spec), opts, rng));
  opts.clip_len = 30;
  CHECK_THROWS(build_clip_sample(seq, opts, rng));
}

TEST_CASE("sample boxes stay in the unit square", "[data][property]") {
  auto videos = generate_corpus(2, 10, 30, 128);
  SampleOptions opts;
  opts.jitter = 0.3;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10000; ++i) {
    const auto& v = videos[rng() % videos.size()];
    const int f = int(rng() % v.size());
    const auto w = jitter_window(v.boxes[f], opts.search_factor, opts.jitter, rng);
    const auto b = clamp_unit(CropTransform{w, 64}.frame_to_crop(v.boxes[f]));
    CHECK((b.x1 >= 0 && b.y1 >= 0 && b.x2 <= 1 && b.y2 <= 1 && b.x1 <= b.x2 && b.y1 <= b.y2));
  }
}
