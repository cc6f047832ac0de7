// SPDX-License-Identifier: Apache-2.0

#include "detrack/cli.hpp"

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "detrack/checkpoint.hpp"
#include "detrack/config.hpp"
#include "detrack/evaluator.hpp"
#include "detrack/layers.hpp"
#include "detrack/model.hpp"
#include "detrack/tracker.hpp"
#include "detrack/trainer.hpp"

namespace detrack {

namespace fs = std::filesystem;

std::vector<AnnotatedSequence> load_sequences(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  if (fs::exists(dir / "groundtruth.txt")) return {read_sequence(dir)};
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no sequences under " + dir.string());
  std::vector<AnnotatedSequence> out;
  for (const auto& d : dirs) out.push_back(read_sequence(d));
  return out;
}

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;

  /// defaults < `base` echo (if any) < config file < --set overrides.
  Config resolve(const std::string& base = {}) const {
    Config c = Config::defaults();
    if (!base.empty()) c.merge_text(base, "checkpoint config");
    std::string path = config_path;
    if (path.empty())
      if (const char* env = std::getenv("DETRACK_CONFIG"); env && *env) path = env;
    if (!path.empty()) c.merge_file(path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("override '" + o + "': expected key=value");
      c.set(o.substr(0, eq), o.substr(eq + 1));
    }
    set_deterministic(c.get_bool("run.deterministic"));
    return c;
  }
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "key=value config file (default: $DETRACK_CONFIG)");
  app->add_option("--set", common.overrides, "override one key, e.g. --set vit.depth=4");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string out;
  std::optional<int> videos, frames, size;
  std::optional<std::int64_t> seed;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const Config c = a.common.resolve();
  const int videos = a.videos.value_or(int(c.get_int("data.videos")));
  const int frames = a.frames.value_or(int(c.get_int("data.frames")));
  const int size = a.size.value_or(int(c.get_int("data.frame_size")));
  const auto seed = std::uint64_t(a.seed.value_or(c.get_int("run.seed")));
  if (videos < 1 || frames < 2 || size < 16)
    throw std::invalid_argument("synth needs videos >= 1, frames >= 2, size >= 16");
  for (int i = 0; i < videos; ++i) {
    auto seq = generate_synthetic(corpus_video_spec(seed, i, frames, size));
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", i);
    seq.name = name;
    write_sequence(fs::path(a.out) / name, seq);
  }
  out << "wrote " << videos << " sequences to " << a.out << "\n";
  return 0;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  Common common;
  int stage = 1;
  std::string resume;
  std::string out;
  std::string data;
  std::string log;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);
  if (a.stage > 1 && !resume)
    throw std::invalid_argument("stage " + std::to_string(a.stage) +
                                " needs --resume with a checkpoint of the previous stage");
  const Config c = a.common.resolve();
  const auto tc = train_config(c, a.stage);
  auto model = make_model(model_config(c), std::uint64_t(c.get_int("run.seed")));
  TrainHooks hooks;
  if (resume) {
    restore_params(*model, resume->params);
    if (resume->meta_int("stage", 0) == a.stage) {
      TrainProgress p;
      p.stage = a.stage;
      p.epochs_done = int(resume->meta_int("epochs_done", 0));
      p.step = resume->meta_int("step", 0);
      p.optimizer = resume->optimizer;
      p.rng = resume->rng;
      hooks.resume = p;
    }
  }

  std::vector<AnnotatedSequence> videos =
      a.data.empty() ? generate_corpus(std::uint64_t(c.get_int("run.seed")),
                                       int(c.get_int("data.videos")), int(c.get_int("data.frames")),
                                       int(c.get_int("data.frame_size")))
                     : load_sequences(a.data);

  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::app);
    if (!log_file) throw std::runtime_error("cannot open log " + a.log);
    hooks.log = &log_file;
  } else {
    hooks.log = &out;
  }
  hooks.on_epoch_end = [&](const TrainProgress& p) {
    save_checkpoint(a.out, make_checkpoint(model, c, p));
  };
  const auto result =
      train_stage(model, tc, sample_options(c), noise_schedule(c), videos, hooks);
  save_checkpoint(a.out, make_checkpoint(model, c, result.progress));
  out << "stage " << a.stage << " done: " << result.steps << " steps, checkpoint " << a.out << "\n";
  return 0;
}

// --- track -------------------------------------------------------------------

struct TrackArgs {
  Common common;
  std::string seq;
  std::string ckpt;
  std::string out;
  std::optional<int> multi_pass;
  std::string update_mode;
  std::string overlay;
};

void write_overlay(const fs::path& dir, const AnnotatedSequence& seq, const SequencePrediction& pred) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    cv::Mat img = seq.frames[i].clone();
    auto rect = [](const PixelBox& b) {
      return cv::Rect(cvRound(b.x), cvRound(b.y), cvRound(b.w), cvRound(b.h));
    };
    cv::rectangle(img, rect(seq.boxes[i]), cv::Scalar(0, 200, 0), 1);
    cv::rectangle(img, rect(pred.boxes[i]), cv::Scalar(0, 0, 255), 1);
    char name[32];
    std::snprintf(name, sizeof(name), "%08zu.png", i + 1);
    if (!cv::imwrite((dir / name).string(), img))
      throw std::runtime_error("frame " + std::to_string(i + 1) + ": cannot write overlay");
  }
}

struct LoadedModel {
  DeTrackModel model{nullptr};
  Config config;
};

LoadedModel load_for_inference(const std::string& ckpt, const Common& common) {
  const auto ck = load_checkpoint(ckpt);
  LoadedModel m{model_from_checkpoint(ck), common.resolve(ck.config)};
  return m;
}

int cmd_track(const TrackArgs& a, std::ostream& out) {
  auto [model, c] = load_for_inference(a.ckpt, a.common);
  if (a.multi_pass) c.set("track.multi_pass", std::to_string(*a.multi_pass));
  if (!a.update_mode.empty()) c.set("memory.update_mode", a.update_mode);
  const auto tc = tracker_config(c);
  for (const auto& seq : load_sequences(a.seq)) {
    const auto pred = run_sequence(model, seq, tc);
    write_prediction_files(a.out, pred);
    if (!a.overlay.empty()) write_overlay(fs::path(a.overlay) / seq.name, seq, pred);
    std::size_t fallbacks = std::count(pred.fallback.begin(), pred.fallback.end(), true);
    out << seq.name << ": " << pred.boxes.size() << " frames, " << pred.update_frames.size()
        << " template updates, " << fallbacks << " fallbacks\n";
  }
  std::ofstream echo(fs::path(a.out) / "config.txt");
  echo << c.echo();
  return 0;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string pred;
  std::string gt;
  std::string protocol = "got10k";
  std::string report;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Config c = a.common.resolve();
  EvalOptions opts;
  opts.exclude_absent = c.get_bool("eval.exclude_absent");
  std::vector<Track> preds, gts;
  std::vector<std::string> names;
  for (const auto& seq : load_sequences(a.gt)) {
    const auto path = fs::path(a.pred) / (seq.name + ".txt");
    auto p = read_annotations(path, seq.width(), seq.height());
    if (p.size() != seq.size())
      throw std::runtime_error(path.string() + ": " + std::to_string(p.size()) +
                               " predictions for " + std::to_string(seq.size()) + " frames");
    preds.push_back(std::move(p));
    gts.push_back(seq.boxes);
    names.push_back(seq.name);
  }
  const auto report = evaluate(preds, gts, names, opts);
  if (!a.report.empty()) write_report(a.report, report);
  if (a.protocol == "got10k")
    out << "AO " << fmt("%.4f", report.ao) << "  SR0.5 " << fmt("%.4f", report.sr50)
        << "  SR0.75 " << fmt("%.4f", report.sr75) << "\n";
  else
    out << "AUC " << fmt("%.4f", report.auc) << "  P_norm " << fmt("%.4f", report.p_norm)
        << "  P " << fmt("%.4f", report.p) << "\n";
  return 0;
}

// --- ablations ---------------------------------------------------------------

struct AblateStepsArgs {
  Common common;
  std::string ckpt;
  std::string seq;
  std::string report;
};

int cmd_ablate_steps(const AblateStepsArgs& a, std::ostream& out) {
  auto [model, c] = load_for_inference(a.ckpt, a.common);
  auto tc = tracker_config(c);
  tc.record_blocks = true;
  EvalOptions opts;
  opts.exclude_absent = c.get_bool("eval.exclude_absent");
  std::vector<std::vector<Track>> per_block(std::size_t(model->config().vit.depth));
  std::vector<Track> gts;
  for (const auto& seq : load_sequences(a.seq)) {
    const auto pred = run_sequence(model, seq, tc);
    const auto tracks = block_tracks(pred);
    for (std::size_t j = 0; j < per_block.size(); ++j) per_block[j].push_back(tracks.at(j));
    gts.push_back(seq.boxes);
  }
  const auto table = step_ablation_table(per_block, gts, opts);
  out << table.render();
  if (!a.report.empty()) {
    std::ofstream f(a.report);
    if (!f) throw std::runtime_error("cannot write report " + a.report);
    f << table.csv();
  }
  return 0;
}

struct AblateMemoryArgs {
  Common common;
  std::string ckpt;
  std::string seq;
  std::vector<std::string> sweeps;
  std::string report;
};

int cmd_ablate_memory(const AblateMemoryArgs& a, std::ostream& out) {
  auto [model, base] = load_for_inference(a.ckpt, a.common);
  auto sweeps = a.sweeps;
  if (sweeps.empty()) sweeps = {"memory.visual_len=1,2,3,4,5", "memory.traj_len=1,3,5,7"};
  const auto sequences = load_sequences(a.seq);
  EvalOptions opts;
  opts.exclude_absent = base.get_bool("eval.exclude_absent");

  std::string csv = "key,value,auc,ao,sr50\n";
  for (const auto& sweep : sweeps) {
    const auto eq = sweep.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("sweep '" + sweep + "': expected key=v1,v2,...");
    const auto key = sweep.substr(0, eq);
    if (key.rfind("memory.", 0) != 0)
      throw std::invalid_argument("sweep '" + sweep + "': only memory.* keys can be swept");
    std::stringstream values(sweep.substr(eq + 1));
    std::string v;
    while (std::getline(values, v, ',')) {
      Config c = base;
      c.set(key, v);
      const auto tc = tracker_config(c);
      std::vector<Track> preds, gts;
      for (const auto& seq : sequences) {
        preds.push_back(run_sequence(model, seq, tc).boxes);
        gts.push_back(seq.boxes);
      }
      const auto r = evaluate(preds, gts, {}, opts);
      csv += key + "," + v + "," + fmt("%.6f", r.auc) + "," + fmt("%.6f", r.ao) + "," +
             fmt("%.6f", r.sr50) + "\n";
    }
  }
  out << csv;
  if (!a.report.empty()) {
    std::ofstream f(a.report);
    if (!f) throw std::runtime_error("cannot write report " + a.report);
    f << csv;
  }
  return 0;
}

// --- info --------------------------------------------------------------------

struct InfoArgs {
  Common common;
  std::string ckpt;
  std::string preset;
  bool keys = false;
};

int cmd_info(const InfoArgs& a, std::ostream& out) {
  if (a.keys) {
    for (const auto& k : Config::registry())
      out << k.key << "=" << format_value(k.default_value) << "  # " << k.doc << "\n";
    return 0;
  }
  ModelConfig mc;
  std::int64_t templates = 3, trajectory = 7;
  if (!a.ckpt.empty()) {
    const auto ck = load_checkpoint(a.ckpt);
    const Config c = a.common.resolve(ck.config);
    out << c.echo();
    for (const auto& [k, v] : ck.meta) out << "# " << k << "=" << v << "\n";
    mc = model_config(c);
    templates = c.get_int("memory.visual_len");
    trajectory = c.get_int("memory.traj_len");
    auto model = model_from_checkpoint(ck);
    out << "parameters: " << parameter_count(*model) << "\n";
  } else if (!a.preset.empty()) {
    mc = preset_model(a.preset);
    out << "preset: " << a.preset << "\n";
    // overrides are still parsed so a bad --set is reported, not ignored
    a.common.resolve();
    torch::NoGradGuard guard;
    auto model = DeTrackModel(mc);
    out << "parameters: " << parameter_count(*model) << "\n";
  } else {
    throw std::invalid_argument("info needs --ckpt PATH, --preset NAME or --keys");
  }
  const auto cost = analytic_macs(mc, templates, trajectory);
  out << "forward cost (" << templates << " templates, " << trajectory
      << " trajectory boxes): " << fmt("%.2f", double(cost.total()) / 1e9) << " GMAC\n";
  out << "  vit " << cost.vit << "  denoise " << cost.denoise << "  refiner " << cost.refiner
      << "  readout " << cost.readout << "  scorer " << cost.scorer << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"detrack: single-pass denoising box tracker"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate synthetic tracking sequences");
  add_common(s, synth.common);
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--videos", synth.videos, "number of sequences (default data.videos)");
  s->add_option("--frames", synth.frames, "frames per sequence (default data.frames)");
  s->add_option("--size", synth.size, "frame side in pixels (default data.frame_size)");
  s->add_option("--seed", synth.seed, "corpus seed (default run.seed)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "run one training stage");
  add_common(t, train.common);
  t->add_option("--stage", train.stage, "1 pairs, 2 sequential, 3 quality head")
      ->check(CLI::Range(1, 3));
  t->add_option("--resume", train.resume, "checkpoint to resume or to start from");
  t->add_option("--out", train.out, "checkpoint to write")->required();
  t->add_option("--data", train.data, "sequence directory (default: generated corpus)");
  t->add_option("--log", train.log, "append training log here instead of stdout");

  TrackArgs track;
  auto* k = app.add_subcommand("track", "track sequences with a trained checkpoint");
  add_common(k, track.common);
  k->add_option("--seq", track.seq, "sequence directory")->required();
  k->add_option("--ckpt", track.ckpt, "checkpoint")->required();
  k->add_option("--out", track.out, "prediction directory")->required();
  k->add_option("--multi-pass", track.multi_pass, "forward passes per frame")
      ->check(CLI::PositiveNumber);
  k->add_option("--update-mode", track.update_mode, "visual memory update rule")
      ->check(CLI::IsMember({"gated", "direct"}));
  k->add_option("--overlay", track.overlay, "write frames with drawn boxes here");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score predictions against ground truth");
  add_common(e, ev.common);
  e->add_option("--pred", ev.pred, "prediction directory")->required();
  e->add_option("--gt", ev.gt, "ground-truth sequence directory")->required();
  e->add_option("--protocol", ev.protocol, "summary metrics to print")
      ->check(CLI::IsMember({"got10k", "lasot"}));
  e->add_option("--report", ev.report, "CSV report path");

  AblateStepsArgs steps;
  auto* as = app.add_subcommand("ablate-steps", "per-denoising-block AO / SR table");
  add_common(as, steps.common);
  as->add_option("--ckpt", steps.ckpt, "checkpoint")->required();
  as->add_option("--seq", steps.seq, "sequence directory")->required();
  as->add_option("--report", steps.report, "CSV output path");

  AblateMemoryArgs mem;
  auto* am = app.add_subcommand("ablate-memory", "sweep memory settings and report AUC");
  add_common(am, mem.common);
  am->add_option("--ckpt", mem.ckpt, "checkpoint")->required();
  am->add_option("--seq", mem.seq, "sequence directory")->required();
  am->add_option("--sweep", mem.sweeps, "key=v1,v2,... (repeatable)");
  am->add_option("--report", mem.report, "CSV output path");

  InfoArgs info;
  auto* in = app.add_subcommand("info", "describe a checkpoint or model preset");
  add_common(in, info.common);
  in->add_option("--ckpt", info.ckpt, "checkpoint");
  in->add_option("--preset", info.preset, "desk, detrack256 or detrack384");
  in->add_flag("--keys", info.keys, "list every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& pe) {
    if (pe.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "detrack: error: " << pe.what() << "\n";
    return pe.get_exit_code();
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out);
    if (k->parsed()) return cmd_track(track, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (as->parsed()) return cmd_ablate_steps(steps, out);
    if (am->parsed()) return cmd_ablate_memory(mem, out);
    if (in->parsed()) return cmd_info(info, out);
  } catch (const std::exception& ex) {
    std::string msg = ex.what();
    // libtorch messages carry a multi-line backtrace; keep the first line
    if (auto nl = msg.find('\n'); nl != std::string::npos) msg.resize(nl);
    err << "detrack: error: " << msg << "\n";
    return 1;
  }
  return 1;
}

}  // namespace detrack
