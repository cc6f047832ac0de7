// SPDX-License-Identifier: Apache-2.0

#include "detrack/data_pipeline.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "detrack/noise_process.hpp"

namespace fs = std::filesystem;

namespace detrack {

void SyntheticVideoSpec::validate() const {
  if (frames < 1) throw std::invalid_argument("synthetic video: frames must be >= 1");
  if (width < 8 || height < 8) throw std::invalid_argument("synthetic video: frame too small");
  if (!(min_size >= 1.0 && max_size >= min_size))
    throw std::invalid_argument("synthetic video: bad object size range");
  if (max_size >= std::min(width, height))
    throw std::invalid_argument("synthetic video: object larger than frame");
  if (max_speed < 0 || velocity_noise < 0 || scale_drift < 0)
    throw std::invalid_argument("synthetic video: negative motion parameter");
  if (occluder_rate < 0.0 || occluder_rate > 1.0)
    throw std::invalid_argument("synthetic video: occluder_rate outside [0, 1]");
  if (initial_box && !(initial_box->w >= 1.0 && initial_box->h >= 1.0 &&
                       initial_box->w * initial_box->h >= 1.0))
    throw std::invalid_argument("synthetic video: initial box below 1 pixel");
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb random_color(std::mt19937_64& rng) {
  return {40 + 200 * uniform01(rng), 40 + 200 * uniform01(rng), 40 + 200 * uniform01(rng)};
}

double color_distance(const Rgb& a, const cv::Scalar& b) {
  return std::abs(a.r - b[0]) + std::abs(a.g - b[1]) + std::abs(a.b - b[2]);
}

cv::Mat make_background(int width, int height, std::mt19937_64& rng) {
  cv::Mat coarse(5, 5, CV_32FC3);
  for (int y = 0; y < coarse.rows; ++y)
    for (int x = 0; x < coarse.cols; ++x)
      coarse.at<cv::Vec3f>(y, x) = cv::Vec3f(float(30 + 190 * uniform01(rng)),
                                             float(30 + 190 * uniform01(rng)),
                                             float(30 + 190 * uniform01(rng)));
  cv::Mat smooth;
  cv::resize(coarse, smooth, cv::Size(width, height), 0, 0, cv::INTER_CUBIC);
  GaussianStream normal(rng);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      auto& px = smooth.at<cv::Vec3f>(y, x);
      const float grain = float(8.0 * normal());
      px += cv::Vec3f(grain, grain, grain);
    }
  return smooth;
}

/// Fraction of pixel (px, py) covered by the axis-aligned box.
double rect_coverage(int px, int py, double x1, double y1, double x2, double y2) {
  const double w = std::max(0.0, std::min(px + 1.0, x2) - std::max(double(px), x1));
  const double h = std::max(0.0, std::min(py + 1.0, y2) - std::max(double(py), y1));
  return w * h;
}

double ellipse_coverage(int px, int py, double cx, double cy, double rx, double ry) {
  constexpr int kSub = 4;
  int inside = 0;
  for (int sy = 0; sy < kSub; ++sy)
    for (int sx = 0; sx < kSub; ++sx) {
      const double x = px + (sx + 0.5) / kSub, y = py + (sy + 0.5) / kSub;
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      inside += dx * dx + dy * dy <= 1.0;
    }
  return double(inside) / (kSub * kSub);
}

struct Appearance {
  bool ellipse = false;
  Rgb base{}, stripe{};
  double stripe_period = 0.33;  // fraction of object width
};

void draw_object(cv::Mat& img, const PixelBox& box, const Appearance& look) {
  const int x0 = std::max(0, int(std::floor(box.x)));
  const int y0 = std::max(0, int(std::floor(box.y)));
  const int x1 = std::min(img.cols - 1, int(std::ceil(box.x + box.w)));
  const int y1 = std::min(img.rows - 1, int(std::ceil(box.y + box.h)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double cover =
          look.ellipse
              ? ellipse_coverage(x, y, box.cx(), box.cy(), 0.5 * box.w, 0.5 * box.h)
              : rect_coverage(x, y, box.x, box.y, box.x + box.w, box.y + box.h);
      if (cover <= 0.0) continue;
      const double u = (x + 0.5 - box.x) / std::max(box.w, 1e-6);
      const bool stripe = std::fmod(u / look.stripe_period, 1.0) < 0.5;
      const Rgb& c = stripe ? look.stripe : look.base;
      auto& px = img.at<cv::Vec3f>(y, x);
      px = px * float(1.0 - cover) + cv::Vec3f(float(c.r), float(c.g), float(c.b)) * float(cover);
    }
}

void draw_occluder(cv::Mat& img, const PixelBox& box, std::mt19937_64& rng) {
  const double bar_w = box.w * (0.3 + 0.3 * uniform01(rng));
  const double bar_x = box.x + (box.w - bar_w) * uniform01(rng);
  const double bar_y = box.y - 0.25 * box.h;
  const double bar_h = 1.5 * box.h;
  const float gray = float(60 + 120 * uniform01(rng));
  for (int y = std::max(0, int(bar_y)); y < std::min(img.rows, int(std::ceil(bar_y + bar_h))); ++y)
    for (int x = std::max(0, int(bar_x)); x < std::min(img.cols, int(std::ceil(bar_x + bar_w))); ++x) {
      const double cover = rect_coverage(x, y, bar_x, bar_y, bar_x + bar_w, bar_y + bar_h);
      auto& px = img.at<cv::Vec3f>(y, x);
      px = px * float(1.0 - cover) + cv::Vec3f(gray, gray, gray) * float(cover);
    }
}

}  // namespace

AnnotatedSequence generate_synthetic(const SyntheticVideoSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  GaussianStream normal(rng);

  cv::Mat background = make_background(spec.width, spec.height, rng);
  const cv::Scalar bg_mean = cv::mean(background);

  Appearance look;
  look.ellipse = spec.shape == ObjectShape::kEllipse ||
                 (spec.shape == ObjectShape::kRandom && uniform01(rng) < 0.5);
  do {
    look.base = random_color(rng);
  } while (color_distance(look.base, bg_mean) < 120.0);
  look.stripe = {255.0 - look.base.r, 255.0 - look.base.g, 255.0 - look.base.b};
  look.stripe_period = 0.25 + 0.25 * uniform01(rng);

  PixelBox box;
  if (spec.initial_box) {
    box = *spec.initial_box;
  } else {
    const double side = spec.min_size + (spec.max_size - spec.min_size) * uniform01(rng);
    const double aspect = std::exp(0.4 * (uniform01(rng) - 0.5));
    box.w = side * aspect;
    box.h = side / aspect;
    box.x = (spec.width - box.w) * (0.2 + 0.6 * uniform01(rng));
    box.y = (spec.height - box.h) * (0.2 + 0.6 * uniform01(rng));
  }
  box.frame_width = spec.width;
  box.frame_height = spec.height;

  std::array<double, 2> vel{};
  if (spec.velocity) {
    vel = *spec.velocity;
  } else {
    const double angle = 2.0 * M_PI * uniform01(rng);
    const double speed = spec.max_speed * uniform01(rng);
    vel = {speed * std::cos(angle), speed * std::sin(angle)};
  }
  const double min_side = spec.min_size * 0.7;
  const double max_side = spec.max_size * 1.3;

  AnnotatedSequence seq;
  seq.name = "synth_" + std::to_string(spec.seed);
  for (int f = 0; f < spec.frames; ++f) {
    if (f > 0) {
      if (spec.velocity_noise > 0) {
        vel[0] += spec.velocity_noise * normal();
        vel[1] += spec.velocity_noise * normal();
        const double speed = std::hypot(vel[0], vel[1]);
        const double cap = std::max(1.5 * spec.max_speed, 1e-9);
        if (speed > cap) {
          vel[0] *= cap / speed;
          vel[1] *= cap / speed;
        }
      }
      if (spec.scale_drift > 0) {
        const double cx = box.cx(), cy = box.cy();
        const double g = std::exp(spec.scale_drift * normal());
        box.w = std::clamp(box.w * g, min_side, max_side);
        box.h = std::clamp(box.h * g, min_side, max_side);
        box.x = cx - 0.5 * box.w;
        box.y = cy - 0.5 * box.h;
      }
      box.x += vel[0];
      box.y += vel[1];
      // Reflect off the frame borders.
      if (box.x < 0) { box.x = -box.x; vel[0] = std::abs(vel[0]); }
      if (box.y < 0) { box.y = -box.y; vel[1] = std::abs(vel[1]); }
      if (box.x + box.w > spec.width) {
        box.x = std::max(0.0, 2.0 * (spec.width - box.w) - box.x);
        vel[0] = -std::abs(vel[0]);
      }
      if (box.y + box.h > spec.height) {
        box.y = std::max(0.0, 2.0 * (spec.height - box.h) - box.y);
        vel[1] = -std::abs(vel[1]);
      }
    }
    cv::Mat img = background.clone();
    draw_object(img, box, look);
    const bool occluded = f > 0 && spec.occluder_rate > 0 && uniform01(rng) < spec.occluder_rate;
    if (occluded) draw_occluder(img, box, rng);
    cv::Mat out;
    img.convertTo(out, CV_8UC3);
    seq.frames.push_back(out);
    seq.boxes.push_back(box);
    seq.occluded.push_back(occluded);
  }
  return seq;
}

SyntheticVideoSpec corpus_video_spec(std::uint64_t base_seed, int index, int frames,
                                     int frame_size) {
  SyntheticVideoSpec spec;
  spec.frames = frames;
  spec.width = spec.height = frame_size;
  spec.min_size = frame_size * 0.11;
  spec.max_size = frame_size * 0.23;
  spec.max_speed = frame_size / 64.0;
  spec.seed = base_seed * 1000003ULL + std::uint64_t(index) * 7919ULL + 17ULL;
  return spec;
}

std::vector<AnnotatedSequence> generate_corpus(std::uint64_t base_seed, int videos, int frames,
                                               int frame_size) {
  std::vector<AnnotatedSequence> out;
  out.reserve(videos);
  for (int i = 0; i < videos; ++i) {
    auto seq = generate_synthetic(corpus_video_spec(base_seed, i, frames, frame_size));
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", i);
    seq.name = name;
    out.push_back(std::move(seq));
  }
  return out;
}

// --- annotation files -------------------------------------------------------

namespace {

/// Accepts [+-]?(digits[.digits*] | .digits)([eE][+-]?digits)?
bool is_decimal_real(std::string_view s) {
  std::size_t i = 0;
  auto digits = [&] {
    const auto start = i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    return i - start;
  };
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  const auto int_digits = digits();
  std::size_t frac_digits = 0;
  if (i < s.size() && s[i] == '.') {
    ++i;
    frac_digits = digits();
  }
  if (int_digits == 0 && frac_digits == 0) return false;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    if (digits() == 0) return false;
  }
  return i == s.size();
}

double parse_real(std::string_view s, std::size_t line) {
  if (!is_decimal_real(s))
    throw std::runtime_error("annotation line " + std::to_string(line) + ": malformed number '" +
                             std::string(s) + "'");
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::runtime_error("annotation line " + std::to_string(line) + ": bad number");
  return v;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<PixelBox> parse_annotations(const std::string& text, int frame_width,
                                        int frame_height) {
  std::vector<PixelBox> boxes;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    ++line_no;
    auto end = text.find('\n', pos);
    std::string_view line(text.data() + pos, (end == std::string::npos ? text.size() : end) - pos);
    pos = end == std::string::npos ? text.size() : end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::array<double, 4> v{};
    std::size_t field = 0, start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (field >= 4)
          throw std::runtime_error("annotation line " + std::to_string(line_no) +
                                   ": expected 4 fields");
        v[field++] = parse_real(line.substr(start, i - start), line_no);
        start = i + 1;
      }
    }
    if (field != 4)
      throw std::runtime_error("annotation line " + std::to_string(line_no) +
                               ": expected 4 fields, got " + std::to_string(field));
    if (v[2] < 0 || v[3] < 0)
      throw std::runtime_error("annotation line " + std::to_string(line_no) +
                               ": negative width or height");
    boxes.push_back({v[0], v[1], v[2], v[3], frame_width, frame_height});
  }
  return boxes;
}

std::vector<PixelBox> read_annotations(const fs::path& path, int frame_width, int frame_height) {
  return parse_annotations(read_file(path), frame_width, frame_height);
}

std::string format_boxes(const std::vector<PixelBox>& boxes) {
  std::string out;
  char buf[128];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f\n", b.x, b.y, b.w, b.h);
    out += buf;
  }
  return out;
}

void write_predictions(const fs::path& path, const std::vector<PixelBox>& boxes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_boxes(boxes);
}

void write_confidences(const fs::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (double v : values) {
    std::snprintf(buf, sizeof(buf), "%.6f\n", v);
    out << buf;
  }
}

void write_sequence(const fs::path& dir, const AnnotatedSequence& seq) {
  fs::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "%08zu.png", i + 1);
    if (!cv::imwrite((dir / name).string(), seq.frames[i]))
      throw std::runtime_error("cannot write frame " + (dir / name).string());
  }
  write_predictions(dir / "groundtruth.txt", seq.boxes);
  std::ofstream occ(dir / "occlusion.label", std::ios::binary);
  for (bool o : seq.occluded) occ << (o ? 1 : 0) << "\n";
}

AnnotatedSequence read_sequence(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a sequence directory: " + dir.string());
  std::vector<fs::path> frame_paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg") frame_paths.push_back(e.path());
  }
  std::sort(frame_paths.begin(), frame_paths.end());
  AnnotatedSequence seq;
  seq.name = dir.filename().string();
  for (std::size_t i = 0; i < frame_paths.size(); ++i) {
    cv::Mat img = cv::imread(frame_paths[i].string(), cv::IMREAD_COLOR);
    if (img.empty())
      throw std::runtime_error("frame " + std::to_string(i + 1) + ": cannot read " +
                               frame_paths[i].string());
    seq.frames.push_back(img);
  }
  if (seq.frames.empty()) throw std::runtime_error("no frames in " + dir.string());
  seq.boxes = read_annotations(dir / "groundtruth.txt", seq.width(), seq.height());
  if (seq.boxes.size() != seq.frames.size())
    throw std::runtime_error("groundtruth.txt has " + std::to_string(seq.boxes.size()) +
                             " lines but " + std::to_string(seq.frames.size()) + " frames");
  seq.occluded.assign(seq.boxes.size(), false);
  if (fs::exists(dir / "occlusion.label")) {
    std::istringstream in(read_file(dir / "occlusion.label"));
    int v = 0;
    for (std::size_t i = 0; i < seq.occluded.size() && (in >> v); ++i) seq.occluded[i] = v != 0;
  }
  return seq;
}

// --- crops ------------------------------------------------------------------

BoundingBox CropTransform::frame_to_crop(const PixelBox& b) const {
  return {(b.x - window.x) / window.w, (b.y - window.y) / window.h,
          (b.x + b.w - window.x) / window.w, (b.y + b.h - window.y) / window.h};
}

PixelBox CropTransform::crop_to_frame(const BoundingBox& b) const {
  const BoundingBox c = canonicalize(b);
  return {window.x + c.x1 * window.w, window.y + c.y1 * window.h, c.width() * window.w,
          c.height() * window.h, window.frame_width, window.frame_height};
}

Crop make_crop(const cv::Mat& frame, const PixelBox& window, int out_size) {
  if (!(window.w > 0 && window.h > 0)) throw std::invalid_argument("make_crop: empty window");
  if (out_size < 1) throw std::invalid_argument("make_crop: bad output size");
  const double sx = out_size / window.w, sy = out_size / window.h;
  // Pixel i spans [i, i + 1]; OpenCV addresses pixel centres at integers.
  cv::Mat m = (cv::Mat_<double>(2, 3) << sx, 0.0, (0.5 - window.x) * sx - 0.5, 0.0, sy,
               (0.5 - window.y) * sy - 0.5);
  Crop crop;
  crop.transform = {window, out_size};
  crop.transform.window.frame_width = frame.cols;
  crop.transform.window.frame_height = frame.rows;
  const cv::Scalar fill = cv::mean(frame);
  cv::warpAffine(frame, crop.image, m, cv::Size(out_size, out_size), cv::INTER_LINEAR,
                 cv::BORDER_CONSTANT, fill);
  cv::Mat ones(frame.rows, frame.cols, CV_8UC1, cv::Scalar(1)), valid;
  cv::warpAffine(ones, valid, m, cv::Size(out_size, out_size), cv::INTER_NEAREST,
                 cv::BORDER_CONSTANT, cv::Scalar(0));
  crop.padded_pixels = out_size * out_size - cv::countNonZero(valid);
  return crop;
}

torch::Tensor image_to_tensor(const cv::Mat& image) {
  TORCH_CHECK(image.type() == CV_8UC3, "image_to_tensor expects CV_8UC3");
  cv::Mat contiguous = image.isContinuous() ? image : image.clone();
  auto t = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32)
               .contiguous();
  return (t / 255.0 - 0.5) / 0.25;
}

// --- training samples --------------------------------------------------------

BoundingBox clamp_unit(const BoundingBox& b) {
  const BoundingBox c = canonicalize(b);
  return {std::clamp(c.x1, 0.0, 1.0), std::clamp(c.y1, 0.0, 1.0), std::clamp(c.x2, 0.0, 1.0),
          std::clamp(c.y2, 0.0, 1.0)};
}

PixelBox jitter_window(const PixelBox& box, double factor, double jitter, std::mt19937_64& rng) {
  PixelBox w = crop_window(box, factor);
  if (jitter <= 0) return w;
  const double scale = 1.0 + jitter * (2.0 * uniform01(rng) - 1.0);
  const double dx = jitter * (2.0 * uniform01(rng) - 1.0) * w.w;
  const double dy = jitter * (2.0 * uniform01(rng) - 1.0) * w.h;
  const double side = w.w * scale;
  return {w.cx() + dx - 0.5 * side, w.cy() + dy - 0.5 * side, side, side, w.frame_width,
          w.frame_height};
}

namespace {

torch::Tensor template_tensor(const AnnotatedSequence& seq, int frame, const SampleOptions& o) {
  const auto window = crop_window(seq.boxes[frame], o.template_factor);
  return image_to_tensor(make_crop(seq.frames[frame], window, o.template_size).image);
}

void require_frames(const AnnotatedSequence& seq, std::size_t n) {
  if (seq.size() < n || seq.frames.size() != seq.size())
    throw std::invalid_argument("training sample: sequence '" + seq.name + "' has " +
                                std::to_string(seq.size()) + " frames, need " +
                                std::to_string(n));
}

}  // namespace

SamplePair build_pair_sample(const AnnotatedSequence& seq, const SampleOptions& opts,
                             std::mt19937_64& rng) {
  require_frames(seq, 2);
  const int n = int(seq.size());
  int a = int(uniform_int(rng, 0, n - 1));
  int b = int(uniform_int(rng, 0, n - 2));
  if (b >= a) ++b;
  SamplePair s;
  s.template_frame = std::min(a, b);
  s.search_frame = std::max(a, b);
  s.templates.push_back(template_tensor(seq, s.template_frame, opts));
  const auto& gt = seq.boxes[s.search_frame];
  const auto window = jitter_window(gt, opts.search_factor, opts.jitter, rng);
  auto crop = make_crop(seq.frames[s.search_frame], window, opts.search_size);
  s.search = image_to_tensor(crop.image);
  s.gt = clamp_unit(crop.transform.frame_to_crop(gt));
  return s;
}

SampleClip build_clip_sample(const AnnotatedSequence& seq, const SampleOptions& opts,
                             std::mt19937_64& rng) {
  if (opts.clip_len < 1) throw std::invalid_argument("clip length must be >= 1");
  require_frames(seq, std::size_t(opts.clip_len) + 1);
  const int n = int(seq.size());
  const int start = int(uniform_int(rng, 1, n - opts.clip_len));
  SampleClip clip;
  clip.templates.push_back(template_tensor(seq, 0, opts));
  for (int k = 0; k < opts.clip_len; ++k) {
    const int idx = start + k;
    // Centre on the previous frame's box, as the tracker does at inference.
    const auto window = jitter_window(seq.boxes[idx - 1], opts.search_factor, opts.jitter, rng);
    auto crop = make_crop(seq.frames[idx], window, opts.search_size);
    ClipFrame f;
    f.search = image_to_tensor(crop.image);
    f.transform = crop.transform;
    f.gt_frame = seq.boxes[idx];
    f.gt = clamp_unit(crop.transform.frame_to_crop(seq.boxes[idx]));
    f.index = idx;
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

TrainingSample build_training_sample(const AnnotatedSequence& seq, SampleStage stage,
                                     const SampleOptions& opts, std::mt19937_64& rng) {
  if (stage == SampleStage::kPair) return build_pair_sample(seq, opts, rng);
  return build_clip_sample(seq, opts, rng);
}

}  // namespace detrack
