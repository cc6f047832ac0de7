// SPDX-License-Identifier: Apache-2.0

#include "detrack/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace detrack {

namespace {

using V = Config::Value;

Config::KeySpec key(std::string name, V def, std::string doc, std::vector<std::string> choices = {}) {
  return {std::move(name), std::move(def), std::move(doc), std::move(choices)};
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const Config::KeySpec* find_spec(const std::string& k) {
  for (const auto& s : Config::registry())
    if (s.key == k) return &s;
  return nullptr;
}

}  // namespace

const std::vector<Config::KeySpec>& Config::registry() {
  static const std::vector<KeySpec> keys = {
      key("run.seed", std::int64_t{0}, "seed for every random stream"),
      key("run.deterministic", true, "single-threaded deterministic kernels"),

      key("vit.depth", std::int64_t{4}, "image blocks = denoising blocks (l)"),
      key("vit.dim", std::int64_t{128}, "token width C"),
      key("vit.heads", std::int64_t{4}, "attention heads"),
      key("vit.patch", std::int64_t{8}, "patch size in pixels"),
      key("vit.ffn_ratio", std::int64_t{4}, "MLP hidden width / C"),
      key("vit.noise_pred_mode", std::string("per_block"), "noise prediction layout",
          {"per_block", "total"}),
      key("vit.denoise_block", std::string("full"), "denoising block ablation",
          {"full", "attention_only", "off"}),
      key("vit.template_pos", true, "add learned positions to template tokens"),

      key("vocab.bins", std::int64_t{100}, "coordinate bins B"),
      key("vocab.dim", std::int64_t{128}, "embedding width (must equal vit.dim)"),
      key("vocab.tied", true, "share input embedding and output similarity table"),

      key("noise.T_max", std::int64_t{1000}, "diffusion timesteps"),
      key("noise.beta_start", 1e-4, "first beta of the linear schedule"),
      key("noise.beta_end", 0.02, "last beta of the linear schedule"),
      key("noise.fixed_t", false, "always noise at T_max during training"),
      key("noise.inference_t", std::int64_t{0}, "debug: noise the tracker's input box at this t"),

      key("memory.visual_len", std::int64_t{3}, "templates kept: 1 fixed + dynamic"),
      key("memory.traj_len", std::int64_t{7}, "trajectory boxes kept"),
      key("memory.sigma1", 0.75, "quality-score threshold for template updates"),
      key("memory.sigma2", 0.9, "softmax-confidence threshold for template updates"),
      key("memory.update_mode", std::string("gated"), "visual memory update rule",
          {"gated", "direct"}),

      key("refiner.layers", std::int64_t{6}, "box refining layers"),
      key("refiner.use_template_kv", false, "cross-attend to template tokens too"),

      key("iounet.hidden", std::int64_t{64}, "quality head hidden width"),

      key("data.template_size", std::int64_t{32}, "template crop side (px)"),
      key("data.search_size", std::int64_t{64}, "search crop side (px)"),
      key("data.template_factor", 2.0, "template context factor"),
      key("data.search_factor", 4.0, "search context factor"),
      key("data.jitter", 0.3, "relative shift/scale jitter of training search windows"),
      key("data.frame_size", std::int64_t{128}, "synthetic frame side (px)"),
      key("data.videos", std::int64_t{200}, "synthetic training videos"),
      key("data.frames", std::int64_t{40}, "frames per synthetic video"),
      key("data.clip_len", std::int64_t{8}, "sequential-stage clip length"),

      key("train.batch", std::int64_t{16}, "samples (stage 1) or clips (stages 2-3) per step"),
      key("train.samples_per_epoch", std::int64_t{6144}, "stage-1 samples per epoch"),
      key("train.clips_per_epoch", std::int64_t{256}, "stage-2 clips per epoch"),
      key("train.stage3_clips_per_epoch", std::int64_t{2048}, "stage-3 clips per epoch"),
      key("train.stage1_epochs", std::int64_t{20}, "pairwise stage epochs"),
      key("train.stage1_decay_epoch", std::int64_t{16}, "pairwise stage lr decay epoch"),
      key("train.stage2_epochs", std::int64_t{5}, "sequential stage epochs"),
      key("train.stage2_decay_epoch", std::int64_t{4}, "sequential stage lr decay epoch"),
      key("train.stage3_epochs", std::int64_t{4}, "quality head stage epochs"),
      key("train.stage3_decay_epoch", std::int64_t{3}, "quality head stage lr decay epoch"),
      key("train.decay_factor", 0.1, "multiplier applied at the decay epoch"),
      key("train.lr_vit", 5e-4, "stage-1 lr for vocabulary + denoising ViT"),
      key("train.lr_refiner", 5e-4, "stage-1 lr for the box refiner"),
      key("train.stage2_lr_vit", 5e-5, "stage-2 lr for vocabulary + denoising ViT"),
      key("train.stage2_lr_refiner", 1e-4, "stage-2 lr for the box refiner"),
      key("train.lr_scorer", 1e-4, "stage-3 lr for the quality head"),
      key("train.weight_decay", 1e-4, "decoupled weight decay"),
      key("train.grad_clip", 1.0, "gradient-norm clip"),
      key("train.lambda_ce", 1.0, "cross-entropy weight"),
      key("train.lambda_siou", 1.0, "SIoU weight"),
      key("train.teacher_forcing", false, "stage 2: push ground truth into trajectory memory"),
      key("train.log_every", std::int64_t{10}, "training log interval (steps)"),

      key("track.multi_pass", std::int64_t{1}, "forward passes per frame"),
      key("eval.exclude_absent", false, "drop frames whose target is absent"),
  };
  return keys;
}

Config Config::defaults() {
  Config c;
  for (const auto& s : registry()) c.values_[s.key] = s.default_value;
  return c;
}

void Config::set(const std::string& k, const std::string& raw) {
  const auto* spec = find_spec(k);
  if (!spec) throw std::invalid_argument("unknown config key '" + k + "'");
  const std::string text = trim(raw);
  auto type_error = [&](const char* type) {
    return std::invalid_argument("config key '" + k + "': expected " + type + ", got '" + text + "'");
  };
  Value v;
  switch (spec->default_value.index()) {
    case 0: {
      std::int64_t x = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (text.empty() || ec != std::errc() || p != text.data() + text.size()) throw type_error("integer");
      v = x;
      break;
    }
    case 1: {
      double x = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (text.empty() || ec != std::errc() || p != text.data() + text.size()) throw type_error("real");
      v = x;
      break;
    }
    case 2:
      if (text == "true" || text == "1") v = true;
      else if (text == "false" || text == "0") v = false;
      else throw type_error("boolean");
      break;
    default:
      if (!spec->choices.empty() &&
          std::find(spec->choices.begin(), spec->choices.end(), text) == spec->choices.end()) {
        std::string allowed;
        for (const auto& c : spec->choices) allowed += (allowed.empty() ? "" : "|") + c;
        throw std::invalid_argument("config key '" + k + "': expected one of " + allowed +
                                    ", got '" + text + "'");
      }
      v = text;
  }
  values_[k] = std::move(v);
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": expected key=value");
    set(trim(t.substr(0, eq)), t.substr(eq + 1));
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

const Config::Value& Config::at(const std::string& k) const {
  auto it = values_.find(k);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + k + "'");
  return it->second;
}

std::int64_t Config::get_int(const std::string& k) const { return std::get<std::int64_t>(at(k)); }
double Config::get_double(const std::string& k) const { return std::get<double>(at(k)); }
bool Config::get_bool(const std::string& k) const { return std::get<bool>(at(k)); }
const std::string& Config::get_string(const std::string& k) const {
  return std::get<std::string>(at(k));
}

std::string format_value(const Config::Value& v) {
  switch (v.index()) {
    case 0: return std::to_string(std::get<std::int64_t>(v));
    case 1: {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", std::get<double>(v));
      return buf;
    }
    case 2: return std::get<bool>(v) ? "true" : "false";
    default: return std::get<std::string>(v);
  }
}

std::string Config::echo() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + format_value(v) + "\n";
  return out;
}

Config parse_config(const std::optional<std::filesystem::path>& file,
                    const std::vector<std::string>& overrides) {
  Config c = Config::defaults();
  if (file) c.merge_file(*file);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override '" + o + "': expected key=value");
    c.set(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
  return c;
}

ModelConfig model_config(const Config& c) {
  ModelConfig m;
  m.vit.depth = c.get_int("vit.depth");
  m.vit.dim = c.get_int("vit.dim");
  m.vit.heads = c.get_int("vit.heads");
  m.vit.patch = c.get_int("vit.patch");
  m.vit.ffn_ratio = c.get_int("vit.ffn_ratio");
  m.vit.template_size = c.get_int("data.template_size");
  m.vit.search_size = c.get_int("data.search_size");
  m.vit.noise_pred_mode = parse_noise_pred_mode(c.get_string("vit.noise_pred_mode"));
  m.vit.block_mode = parse_denoise_block_mode(c.get_string("vit.denoise_block"));
  m.vit.template_pos = c.get_bool("vit.template_pos");
  m.vocab.bins = c.get_int("vocab.bins");
  m.vocab.tied = c.get_bool("vocab.tied");
  if (c.get_int("vocab.dim") != m.vit.dim)
    throw std::invalid_argument("config key 'vocab.dim': must equal vit.dim");
  m.refiner.layers = c.get_int("refiner.layers");
  m.refiner.use_template_kv = c.get_bool("refiner.use_template_kv");
  m.refiner.max_trajectory = std::max<std::int64_t>(7, c.get_int("memory.traj_len"));
  m.quality.hidden = c.get_int("iounet.hidden");
  m.sync();
  m.validate();
  return m;
}

MemoryConfig memory_config(const Config& c) {
  MemoryConfig m;
  const auto visual = c.get_int("memory.visual_len");
  const auto traj = c.get_int("memory.traj_len");
  if (visual < 1) throw std::invalid_argument("config key 'memory.visual_len': must be >= 1");
  if (traj < 0) throw std::invalid_argument("config key 'memory.traj_len': must be >= 0");
  m.visual_len = std::size_t(visual);
  m.traj_len = std::size_t(traj);
  m.sigma1 = c.get_double("memory.sigma1");
  m.sigma2 = c.get_double("memory.sigma2");
  m.update_mode = parse_update_mode(c.get_string("memory.update_mode"));
  return m;
}

SampleOptions sample_options(const Config& c) {
  SampleOptions o;
  o.template_size = int(c.get_int("data.template_size"));
  o.search_size = int(c.get_int("data.search_size"));
  o.template_factor = c.get_double("data.template_factor");
  o.search_factor = c.get_double("data.search_factor");
  o.jitter = c.get_double("data.jitter");
  o.clip_len = int(c.get_int("data.clip_len"));
  return o;
}

NoiseSchedule noise_schedule(const Config& c) {
  return make_schedule(int(c.get_int("noise.T_max")), c.get_double("noise.beta_start"),
                       c.get_double("noise.beta_end"));
}

}  // namespace detrack
