// SPDX-License-Identifier: Apache-2.0

#include "detrack/trainer.hpp"

#include <ATen/Context.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "detrack/compound_memory.hpp"
#include "detrack/geometry.hpp"

namespace detrack {

namespace F = torch::nn::functional;

namespace {

constexpr double kSiouEps = 1e-9;

torch::Tensor corners(const std::vector<BoundingBox>& boxes, torch::Dtype dtype) {
  return boxes_tensor(boxes).to(dtype);
}

std::string save_rng(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

void load_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream ss(state);
  ss >> rng;
  if (!ss) throw std::runtime_error("corrupt random engine state in checkpoint");
}

// AdamW moments written in parameter order. libtorch's own archive keys the
// state by address and embeds a random id, so its bytes differ run to run.
template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("corrupt optimizer state in checkpoint");
  return v;
}

void put_tensor(std::ostream& out, const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat32).contiguous();
  put<std::int64_t>(out, c.numel());
  out.write(static_cast<const char*>(c.data_ptr()), std::streamsize(c.numel() * sizeof(float)));
}

torch::Tensor take_tensor(std::istream& in, const torch::Tensor& like) {
  const auto n = take<std::int64_t>(in);
  if (n != like.numel()) throw std::runtime_error("optimizer state does not match the model");
  auto t = torch::empty(like.sizes(), torch::kFloat32);
  in.read(static_cast<char*>(t.data_ptr()), std::streamsize(n * sizeof(float)));
  if (!in) throw std::runtime_error("corrupt optimizer state in checkpoint");
  return t.to(like.dtype());
}

std::string save_optimizer(torch::optim::AdamW& opt) {
  std::ostringstream out;
  auto& state = opt.state();
  for (const auto& group : opt.param_groups())
    for (const auto& p : group.params()) {
      auto it = state.find(p.unsafeGetTensorImpl());
      put<std::uint8_t>(out, it != state.end());
      if (it == state.end()) continue;
      const auto& st = static_cast<const torch::optim::AdamWParamState&>(*it->second);
      put<std::int64_t>(out, st.step());
      put_tensor(out, st.exp_avg());
      put_tensor(out, st.exp_avg_sq());
      put<std::uint8_t>(out, st.max_exp_avg_sq().defined());
      if (st.max_exp_avg_sq().defined()) put_tensor(out, st.max_exp_avg_sq());
    }
  return out.str();
}

void load_optimizer(torch::optim::AdamW& opt, const std::string& bytes) {
  std::istringstream in(bytes);
  auto& state = opt.state();
  for (const auto& group : opt.param_groups())
    for (const auto& p : group.params()) {
      if (!take<std::uint8_t>(in)) continue;
      auto st = std::make_unique<torch::optim::AdamWParamState>();
      st->step(take<std::int64_t>(in));
      st->exp_avg(take_tensor(in, p));
      st->exp_avg_sq(take_tensor(in, p));
      if (take<std::uint8_t>(in)) st->max_exp_avg_sq(take_tensor(in, p));
      state[p.unsafeGetTensorImpl()] = std::move(st);
    }
  if (in.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("optimizer state does not match the model");
}

struct GroupSpec {
  std::vector<torch::Tensor> params;
  double lr;
};

class Optimization {
 public:
  Optimization(std::vector<GroupSpec> groups, const TrainConfig& config) : config_(config) {
    std::vector<torch::optim::OptimizerParamGroup> param_groups;
    for (auto& g : groups) {
      base_lr_.push_back(g.lr);
      for (auto& p : g.params) trainable_.push_back(p);
      auto opts = std::make_unique<torch::optim::AdamWOptions>(g.lr);
      opts->weight_decay(config.weight_decay);
      param_groups.emplace_back(std::move(g.params), std::move(opts));
    }
    optimizer_ = std::make_unique<torch::optim::AdamW>(std::move(param_groups));
  }

  void set_epoch(int epoch) {
    const double scale = config_.lr_scale(epoch);
    auto& groups = optimizer_->param_groups();
    for (std::size_t i = 0; i < groups.size(); ++i)
      static_cast<torch::optim::AdamWOptions&>(groups[i].options()).lr(base_lr_[i] * scale);
  }

  double lr() const {
    return static_cast<const torch::optim::AdamWOptions&>(optimizer_->param_groups()[0].options())
        .lr();
  }

  void zero_grad() { optimizer_->zero_grad(); }

  void step() {
    if (config_.grad_clip > 0) torch::nn::utils::clip_grad_norm_(trainable_, config_.grad_clip);
    optimizer_->step();
  }

  torch::optim::AdamW& optimizer() { return *optimizer_; }

 private:
  TrainConfig config_;
  std::vector<double> base_lr_;
  std::vector<torch::Tensor> trainable_;
  std::unique_ptr<torch::optim::AdamW> optimizer_;
};

void require_finite(const LossReport& r, std::int64_t step) {
  if (!std::isfinite(r.ce) || !std::isfinite(r.siou) || !std::isfinite(r.total))
    throw std::runtime_error("training diverged: non-finite loss at step " +
                             std::to_string(step));
}

const AnnotatedSequence& pick_video(const std::vector<AnnotatedSequence>& videos,
                                    std::size_t min_frames, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto& v = videos[std::size_t(uniform_int(rng, 0, std::int64_t(videos.size()) - 1))];
    if (v.size() >= min_frames) return v;
  }
  throw std::invalid_argument("no training video has at least " + std::to_string(min_frames) +
                              " frames");
}

BoxTokens noisy_tokens(const BoundingBox& gt, const NoiseSchedule& schedule, bool fixed_t,
                       std::int64_t bins, std::mt19937_64& rng) {
  const int t = fixed_t ? schedule.t_max() : sample_timestep(schedule, rng);
  GaussianStream normal(rng);
  const auto sample = add_noise({gt.x1, gt.y1, gt.x2, gt.y2}, t, schedule, normal);
  return quantize_box(sample.x_noisy, bins);
}

/// Trajectory boxes (frame-normalized) expressed as tokens in a crop frame.
torch::Tensor trajectory_tokens(const std::vector<TrajectoryMemory>& memories,
                                const std::vector<CropTransform>& transforms,
                                const std::vector<PixelBox>& frames, std::int64_t bins) {
  const auto k = memories.front().size();
  if (k == 0) return {};
  std::vector<BoxTokens> tokens;
  for (std::size_t i = 0; i < memories.size(); ++i) {
    if (memories[i].size() != k) throw std::logic_error("ragged trajectory batch");
    for (const auto& b : memories[i].boxes()) {
      const auto px = to_pixel(b, frames[i].frame_width, frames[i].frame_height);
      tokens.push_back(quantize_box(clamp_unit(transforms[i].frame_to_crop(px)), bins));
    }
  }
  return tokens_tensor(tokens).reshape({std::int64_t(memories.size()), std::int64_t(k), 4});
}

void log_line(std::ostream* out, const LogEntry& e) {
  if (!out) return;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld,%d,%.6f,%.6f,%.6f,%.6g\n", static_cast<long long>(e.step),
                e.epoch, e.loss.ce, e.loss.siou, e.loss.total, e.lr);
  *out << buf << std::flush;
}

/// Shared epoch / step bookkeeping for all three stages.
template <typename StepFn>
TrainResult run_epochs(const TrainConfig& config, Optimization& opt, std::mt19937_64& rng,
                       const TrainHooks& hooks, StepFn&& step_fn) {
  config.validate();
  TrainResult result;
  auto& progress = result.progress;
  progress.stage = config.stage;
  if (hooks.resume && hooks.resume->stage == config.stage) {
    progress = *hooks.resume;
    if (!progress.optimizer.empty()) load_optimizer(opt.optimizer(), progress.optimizer);
    if (!progress.rng.empty()) load_rng(rng, progress.rng);
  }
  if (hooks.log && progress.step == 0) *hooks.log << "step,epoch,ce,siou,total,lr\n";
  for (int epoch = progress.epochs_done; epoch < config.epochs; ++epoch) {
    opt.set_epoch(epoch);
    for (int s = 0; s < config.steps_per_epoch(); ++s) {
      opt.zero_grad();
      const LossReport loss = step_fn(progress.step);
      require_finite(loss, progress.step);
      opt.step();
      ++progress.step;
      LogEntry e{progress.step, epoch, loss, opt.lr()};
      result.history.push_back(e);
      if (config.log_every > 0 && progress.step % config.log_every == 0) log_line(hooks.log, e);
    }
    progress.epochs_done = epoch + 1;
    progress.optimizer = save_optimizer(opt.optimizer());
    progress.rng = save_rng(rng);
    if (hooks.on_epoch_end) hooks.on_epoch_end(progress);
  }
  result.steps = progress.step;
  return result;
}

std::mt19937_64 stage_rng(const TrainConfig& config) {
  std::seed_seq seq{std::uint32_t(config.seed), std::uint32_t(config.seed >> 32),
                    std::uint32_t(config.stage)};
  return std::mt19937_64(seq);
}

torch::Tensor stack_templates(const std::vector<std::vector<torch::Tensor>>& per_sample) {
  std::vector<torch::Tensor> rows;
  for (const auto& t : per_sample) rows.push_back(torch::stack(t));
  return torch::stack(rows);
}

}  // namespace

LossReport LossTerms::report() const {
  LossReport r;
  r.ce = ce.item<double>();
  r.siou = siou.item<double>();
  r.total = total.item<double>();
  return r;
}

torch::Tensor siou_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  TORCH_CHECK(pred.dim() == 2 && pred.size(1) == 4 && gt.sizes() == pred.sizes(),
              "siou_loss expects matching [N, 4] boxes");
  auto px1 = pred.select(1, 0), py1 = pred.select(1, 1);
  auto px2 = pred.select(1, 2), py2 = pred.select(1, 3);
  auto gx1 = gt.select(1, 0), gy1 = gt.select(1, 1);
  auto gx2 = gt.select(1, 2), gy2 = gt.select(1, 3);
  auto w1 = px2 - px1, h1 = py2 - py1;
  auto w2 = gx2 - gx1, h2 = gy2 - gy1;

  auto iw = (torch::minimum(px2, gx2) - torch::maximum(px1, gx1)).clamp_min(0.0);
  auto ih = (torch::minimum(py2, gy2) - torch::maximum(py1, gy1)).clamp_min(0.0);
  auto inter = iw * ih;
  auto overlap = inter / (w1 * h1 + w2 * h2 - inter);

  auto cw = torch::maximum(px2, gx2) - torch::minimum(px1, gx1);
  auto ch = torch::maximum(py2, gy2) - torch::minimum(py1, gy1);
  auto s_cw = 0.5 * (gx1 + gx2) - 0.5 * (px1 + px2);
  auto s_ch = 0.5 * (gy1 + gy2) - 0.5 * (py1 + py2);
  // the tiny floor keeps the square root differentiable at zero offset
  auto sigma = torch::sqrt(s_cw * s_cw + s_ch * s_ch + 1e-24) + kSiouEps;
  auto sin_x = s_cw.abs() / sigma;
  auto sin_y = s_ch.abs() / sigma;
  auto sin_alpha = torch::where(sin_x > std::numbers::sqrt2 / 2.0, sin_y, sin_x);
  auto angle = torch::cos(2.0 * torch::asin(sin_alpha) - std::numbers::pi / 2.0);
  auto gamma = angle - 2.0;
  auto rho_x = (s_cw / (cw + kSiouEps)).pow(2);
  auto rho_y = (s_ch / (ch + kSiouEps)).pow(2);
  auto distance = 2.0 - torch::exp(gamma * rho_x) - torch::exp(gamma * rho_y);

  auto omega_w = (w1 - w2).abs() / torch::maximum(w1, w2);
  auto omega_h = (h1 - h2).abs() / torch::maximum(h1, h2);
  auto shape = (1.0 - torch::exp(-omega_w)).pow(4) + (1.0 - torch::exp(-omega_h)).pow(4);
  return 1.0 - overlap + 0.5 * (distance + shape);
}

torch::Tensor softargmax_box(const torch::Tensor& logits) {
  TORCH_CHECK(logits.dim() == 3 && logits.size(1) == 4, "logits must be [N, 4, B]");
  const auto bins = logits.size(2);
  auto values = torch::arange(bins, logits.options()) / double(bins - 1);
  auto e = torch::matmul(torch::softmax(logits, -1), values);  // [N, 4]
  auto x1 = torch::minimum(e.select(1, 0), e.select(1, 2));
  auto x2 = torch::maximum(e.select(1, 0), e.select(1, 2));
  auto y1 = torch::minimum(e.select(1, 1), e.select(1, 3));
  auto y2 = torch::maximum(e.select(1, 1), e.select(1, 3));
  return torch::stack({x1, y1, x2, y2}, 1);
}

LossTerms compute_loss(const torch::Tensor& logits, const torch::Tensor& gt,
                       const LossWeights& weights) {
  TORCH_CHECK(logits.dim() == 3 && logits.size(1) == 4, "logits must be [N, 4, B]");
  TORCH_CHECK(gt.dim() == 2 && gt.size(0) == logits.size(0) && gt.size(1) == 4,
              "gt must be [N, 4]");
  const auto bins = logits.size(2);
  auto gt_cpu = gt.detach().to(torch::kDouble).contiguous();
  auto acc = gt_cpu.accessor<double, 2>();
  auto targets = torch::empty({gt.size(0), 4}, torch::kLong);
  auto tacc = targets.accessor<std::int64_t, 2>();
  for (std::int64_t i = 0; i < gt.size(0); ++i)
    for (int c = 0; c < 4; ++c) tacc[i][c] = quantize(acc[i][c], bins);

  LossTerms out;
  out.ce = F::cross_entropy(logits.reshape({-1, bins}), targets.reshape({-1}));
  out.siou = siou_loss(softargmax_box(logits), gt.to(logits.scalar_type())).mean();
  out.total = weights.ce * out.ce + weights.siou * out.siou;
  return out;
}

LossReport compute_loss(const CoordLogits& logits, const BoundingBox& gt,
                        const LossWeights& weights) {
  auto gt_t = corners({canonicalize(gt)}, logits.logits.scalar_type());
  auto report = compute_loss(logits.logits.unsqueeze(0), gt_t, weights).report();
  report.total = weights.ce * report.ce + weights.siou * report.siou;
  return report;
}

int TrainConfig::steps_per_epoch() const { return std::max(1, samples_per_epoch / batch); }

double TrainConfig::lr_scale(int epoch) const { return epoch >= decay_epoch ? decay_factor : 1.0; }

void TrainConfig::validate() const {
  if (stage < 1 || stage > 3) throw std::invalid_argument("train stage must be 1, 2 or 3");
  if (epochs < 1) throw std::invalid_argument("train epochs must be positive");
  if (decay_epoch < 0 || decay_epoch >= epochs)
    throw std::invalid_argument("train decay epoch must be in [0, epochs)");
  if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
  if (samples_per_epoch < 1) throw std::invalid_argument("samples per epoch must be >= 1");
  if (clip_len < 1) throw std::invalid_argument("data.clip_len must be >= 1");
  if (weights.ce < 0 || weights.siou < 0)
    throw std::invalid_argument("loss weights must be non-negative");
}

TrainConfig train_config(const Config& c, int stage) {
  TrainConfig t;
  t.stage = stage;
  t.decay_factor = c.get_double("train.decay_factor");
  t.weight_decay = c.get_double("train.weight_decay");
  t.grad_clip = c.get_double("train.grad_clip");
  t.batch = int(c.get_int("train.batch"));
  t.clip_len = int(c.get_int("data.clip_len"));
  t.weights = {c.get_double("train.lambda_ce"), c.get_double("train.lambda_siou")};
  t.teacher_forcing = c.get_bool("train.teacher_forcing");
  t.fixed_t = c.get_bool("noise.fixed_t");
  t.seed = std::uint64_t(c.get_int("run.seed"));
  t.log_every = int(c.get_int("train.log_every"));
  t.lr_scorer = c.get_double("train.lr_scorer");
  switch (stage) {
    case 1:
      t.epochs = int(c.get_int("train.stage1_epochs"));
      t.decay_epoch = int(c.get_int("train.stage1_decay_epoch"));
      t.lr_vit = c.get_double("train.lr_vit");
      t.lr_refiner = c.get_double("train.lr_refiner");
      t.samples_per_epoch = int(c.get_int("train.samples_per_epoch"));
      break;
    case 2:
      t.epochs = int(c.get_int("train.stage2_epochs"));
      t.decay_epoch = int(c.get_int("train.stage2_decay_epoch"));
      t.lr_vit = c.get_double("train.stage2_lr_vit");
      t.lr_refiner = c.get_double("train.stage2_lr_refiner");
      t.samples_per_epoch = int(c.get_int("train.clips_per_epoch"));
      break;
    case 3:
      t.epochs = int(c.get_int("train.stage3_epochs"));
      t.decay_epoch = int(c.get_int("train.stage3_decay_epoch"));
      t.samples_per_epoch = int(c.get_int("train.stage3_clips_per_epoch"));
      break;
    default:
      throw std::invalid_argument("train stage must be 1, 2 or 3");
  }
  t.validate();
  return t;
}

TrainResult train_stage1(DeTrackModel& model, const TrainConfig& config,
                         const SampleOptions& samples, const NoiseSchedule& schedule,
                         const std::vector<AnnotatedSequence>& videos, const TrainHooks& hooks) {
  if (config.stage != 1) throw std::invalid_argument("train_stage1 needs a stage-1 config");
  if (videos.empty()) throw std::invalid_argument("no training videos");
  model->train();
  Optimization opt({{model->backbone_parameters(), config.lr_vit},
                    {model->refiner_parameters(), config.lr_refiner}},
                   config);
  auto rng = stage_rng(config);
  const auto bins = model->config().vocab.bins;

  return run_epochs(config, opt, rng, hooks, [&](std::int64_t step) {
    std::vector<std::vector<torch::Tensor>> templates;
    std::vector<torch::Tensor> search;
    std::vector<BoundingBox> gt;
    std::vector<BoxTokens> noisy;
    for (int b = 0; b < config.batch; ++b) {
      auto pair = build_pair_sample(pick_video(videos, 2, rng), samples, rng);
      noisy.push_back(noisy_tokens(pair.gt, schedule, config.fixed_t, bins, rng));
      templates.push_back(std::move(pair.templates));
      search.push_back(pair.search);
      gt.push_back(pair.gt);
    }
    auto out = model->forward(stack_templates(templates), torch::stack(search),
                              tokens_tensor(noisy));
    auto loss = compute_loss(out.refined.logits, corners(gt, torch::kFloat32), config.weights);
    auto report = loss.report();
    require_finite(report, step);
    loss.total.backward();
    return report;
  });
}

TrainResult train_stage2(DeTrackModel& model, const TrainConfig& config,
                         const SampleOptions& samples, const NoiseSchedule& schedule,
                         const std::vector<AnnotatedSequence>& videos, const TrainHooks& hooks) {
  if (config.stage != 2) throw std::invalid_argument("train_stage2 needs a stage-2 config");
  if (videos.empty()) throw std::invalid_argument("no training videos");
  model->train();
  Optimization opt({{model->backbone_parameters(), config.lr_vit},
                    {model->refiner_parameters(), config.lr_refiner}},
                   config);
  auto rng = stage_rng(config);
  const auto bins = model->config().vocab.bins;
  const auto capacity = std::size_t(model->config().refiner.max_trajectory);
  SampleOptions opts = samples;
  opts.clip_len = config.clip_len;

  return run_epochs(config, opt, rng, hooks, [&](std::int64_t step) {
    std::vector<SampleClip> clips;
    std::vector<std::vector<torch::Tensor>> templates;
    for (int b = 0; b < config.batch; ++b) {
      clips.push_back(build_clip_sample(pick_video(videos, opts.clip_len + 1, rng), opts, rng));
      templates.push_back(clips.back().templates);
    }
    const auto template_batch = stack_templates(templates);
    std::vector<TrajectoryMemory> memories(clips.size(), TrajectoryMemory(capacity));
    LossReport sum;
    for (int k = 0; k < opts.clip_len; ++k) {
      std::vector<torch::Tensor> search;
      std::vector<BoundingBox> gt;
      std::vector<BoxTokens> noisy;
      std::vector<CropTransform> transforms;
      std::vector<PixelBox> frames;
      for (auto& clip : clips) {
        const auto& f = clip.frames[std::size_t(k)];
        search.push_back(f.search);
        gt.push_back(f.gt);
        noisy.push_back(noisy_tokens(f.gt, schedule, config.fixed_t, bins, rng));
        transforms.push_back(f.transform);
        frames.push_back(f.gt_frame);
      }
      auto out = model->forward(template_batch, torch::stack(search), tokens_tensor(noisy),
                                trajectory_tokens(memories, transforms, frames, bins));
      auto loss = compute_loss(out.refined.logits, corners(gt, torch::kFloat32), config.weights);
      auto report = loss.report();
      require_finite(report, step);
      // Trajectory tokens are discrete, so no gradient crosses frames and the
      // per-frame backward accumulates exactly the gradient of the summed loss.
      loss.total.backward();
      sum.ce += report.ce / opts.clip_len;
      sum.siou += report.siou / opts.clip_len;
      sum.total += report.total / opts.clip_len;

      const auto decoded = decode_boxes(out.refined.logits.detach());
      for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& f = clips[i].frames[std::size_t(k)];
        const PixelBox pushed =
            config.teacher_forcing ? f.gt_frame : f.transform.crop_to_frame(decoded[i].box);
        memories[i].push(to_normalized(pushed));
      }
    }
    return sum;
  });
}

TrainResult train_stage3(DeTrackModel& model, const TrainConfig& config,
                         const SampleOptions& samples,
                         const std::vector<AnnotatedSequence>& videos, const TrainHooks& hooks) {
  if (config.stage != 3) throw std::invalid_argument("train_stage3 needs a stage-3 config");
  if (videos.empty()) throw std::invalid_argument("no training videos");
  model->eval();
  model->scorer->train();
  Optimization opt({{model->scorer_parameters(), config.lr_scorer}}, config);
  auto rng = stage_rng(config);
  const auto bins = model->config().vocab.bins;
  const auto capacity = std::size_t(model->config().refiner.max_trajectory);
  SampleOptions opts = samples;
  opts.clip_len = config.clip_len;

  return run_epochs(config, opt, rng, hooks, [&](std::int64_t) {
    std::vector<SampleClip> clips;
    std::vector<std::vector<torch::Tensor>> templates;
    std::vector<PixelBox> previous;
    for (int b = 0; b < config.batch; ++b) {
      const auto& video = pick_video(videos, opts.clip_len + 1, rng);
      clips.push_back(build_clip_sample(video, opts, rng));
      templates.push_back(clips.back().templates);
      previous.push_back(video.boxes[std::size_t(clips.back().frames.front().index - 1)]);
    }
    const auto template_batch = stack_templates(templates);
    std::vector<TrajectoryMemory> memories(clips.size(), TrajectoryMemory(capacity));
    for (std::size_t i = 0; i < clips.size(); ++i) memories[i].push(to_normalized(previous[i]));

    torch::Tensor total;
    for (int k = 0; k < opts.clip_len; ++k) {
      std::vector<torch::Tensor> search;
      std::vector<BoxTokens> input;
      std::vector<CropTransform> transforms;
      std::vector<PixelBox> frames;
      for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& f = clips[i].frames[std::size_t(k)];
        search.push_back(f.search);
        input.push_back(quantize_box(clamp_unit(f.transform.frame_to_crop(previous[i])), bins));
        transforms.push_back(f.transform);
        frames.push_back(f.gt_frame);
      }
      ModelOutput out;
      {
        torch::NoGradGuard frozen;
        out = model->forward(template_batch, torch::stack(search), tokens_tensor(input),
                             trajectory_tokens(memories, transforms, frames, bins));
      }
      const auto decoded = decode_boxes(out.refined.logits);
      std::vector<BoundingBox> boxes;
      std::vector<double> truth;
      for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& f = clips[i].frames[std::size_t(k)];
        boxes.push_back(decoded[i].box);
        truth.push_back(iou(decoded[i].box, f.gt));
        auto next = f.transform.crop_to_frame(decoded[i].box);
        if (next.w > 0 && next.h > 0) previous[i] = clamp_to_frame(next);
        memories[i].push(to_normalized(previous[i]));
      }
      auto pred = model->scorer->forward(out.vit.s.detach(), boxes_tensor(boxes).to(torch::kFloat32));
      auto loss = quality_loss(pred, torch::tensor(truth, torch::kDouble).to(torch::kFloat32));
      total = total.defined() ? total + loss : loss;
    }
    total = total / double(opts.clip_len);
    total.backward();
    LossReport r;
    r.total = total.item<double>();
    return r;
  });
}

TrainResult train_stage(DeTrackModel& model, const TrainConfig& config,
                        const SampleOptions& samples, const NoiseSchedule& schedule,
                        const std::vector<AnnotatedSequence>& videos, const TrainHooks& hooks) {
  switch (config.stage) {
    case 1: return train_stage1(model, config, samples, schedule, videos, hooks);
    case 2: return train_stage2(model, config, samples, schedule, videos, hooks);
    case 3: return train_stage3(model, config, samples, videos, hooks);
    default: throw std::invalid_argument("train stage must be 1, 2 or 3");
  }
}

void set_deterministic(bool on) {
  if (on) torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(on, /*warn_only=*/false);
}

DeTrackModel make_model(const ModelConfig& config, std::uint64_t seed) {
  torch::manual_seed(seed);
  return DeTrackModel(config);
}

Checkpoint make_checkpoint(const DeTrackModel& model, const Config& config,
                           const TrainProgress& progress) {
  Checkpoint ck;
  ck.meta["stage"] = std::to_string(progress.stage);
  ck.meta["epochs_done"] = std::to_string(progress.epochs_done);
  ck.meta["step"] = std::to_string(progress.step);
  ck.config = config.echo();
  ck.params = capture_params(*model);
  ck.optimizer = progress.optimizer;
  ck.rng = progress.rng;
  return ck;
}

DeTrackModel model_from_checkpoint(const Checkpoint& ck) {
  Config c = Config::defaults();
  c.merge_text(ck.config, "checkpoint config");
  auto model = make_model(model_config(c), 0);
  restore_params(*model, ck.params);
  model->eval();
  return model;
}

}  // namespace detrack
