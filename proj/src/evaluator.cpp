// SPDX-License-Identifier: Apache-2.0

#include "detrack/evaluator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace detrack {

namespace {

constexpr int kAucThresholds = 51;
constexpr int kNormThresholds = 51;

bool absent(const PixelBox& gt) { return !(gt.w > 0.0 && gt.h > 0.0); }

void check_aligned(const Track& pred, const Track& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("prediction has " + std::to_string(pred.size()) +
                                " frames, ground truth has " + std::to_string(gt.size()));
}

void check_aligned(const std::vector<Track>& preds, const std::vector<Track>& gts) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("prediction and ground-truth sequence counts differ");
  for (std::size_t i = 0; i < preds.size(); ++i) check_aligned(preds[i], gts[i]);
}

/// Centre error per scored frame; infinity on absent targets.
std::vector<double> centre_errors(const Track& pred, const Track& gt, bool normalized,
                                  const EvalOptions& opts) {
  check_aligned(pred, gt);
  std::vector<double> out;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    if (absent(gt[i])) {
      if (!opts.exclude_absent) out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    double dx = pred[i].cx() - gt[i].cx();
    double dy = pred[i].cy() - gt[i].cy();
    if (normalized) {
      dx /= gt[i].w;
      dy /= gt[i].h;
    }
    out.push_back(std::hypot(dx, dy));
  }
  return out;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double fraction_above(const std::vector<double>& ious, double tau) {
  if (ious.empty()) return 0.0;
  std::size_t n = 0;
  for (double x : ious) n += x > tau;
  return double(n) / double(ious.size());
}

double fraction_within(const std::vector<double>& errors, double thresh) {
  if (errors.empty()) return 0.0;
  std::size_t n = 0;
  for (double e : errors) n += e <= thresh;
  return double(n) / double(errors.size());
}

double auc_of(const std::vector<double>& ious) {
  double s = 0.0;
  for (int k = 0; k < kAucThresholds; ++k) s += fraction_above(ious, k / double(kAucThresholds - 1));
  return s / kAucThresholds;
}

double norm_precision_of(const std::vector<double>& errors) {
  double s = 0.0;
  for (int k = 0; k < kNormThresholds; ++k)
    s += fraction_within(errors, 0.5 * k / double(kNormThresholds - 1));
  return s / kNormThresholds;
}

template <typename PerSequence>
double over_sequences(const std::vector<Track>& preds, const std::vector<Track>& gts,
                      PerSequence&& f) {
  check_aligned(preds, gts);
  if (preds.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += f(preds[i], gts[i]);
  return s / double(preds.size());
}

}  // namespace

std::vector<double> frame_ious(const Track& pred, const Track& gt, const EvalOptions& opts) {
  check_aligned(pred, gt);
  std::vector<double> out;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    if (absent(gt[i])) {
      if (!opts.exclude_absent) out.push_back(0.0);
      continue;
    }
    out.push_back(iou(pred[i], gt[i]));
  }
  return out;
}

double average_overlap(const std::vector<Track>& preds, const std::vector<Track>& gts,
                       const EvalOptions& opts) {
  return over_sequences(preds, gts,
                        [&](const Track& p, const Track& g) { return mean(frame_ious(p, g, opts)); });
}

double success_rate(const std::vector<Track>& preds, const std::vector<Track>& gts, double tau,
                    const EvalOptions& opts) {
  return over_sequences(preds, gts, [&](const Track& p, const Track& g) {
    return fraction_above(frame_ious(p, g, opts), tau);
  });
}

double success_auc(const std::vector<Track>& preds, const std::vector<Track>& gts,
                   const EvalOptions& opts) {
  return over_sequences(preds, gts,
                        [&](const Track& p, const Track& g) { return auc_of(frame_ious(p, g, opts)); });
}

double precision(const std::vector<Track>& preds, const std::vector<Track>& gts,
                 const EvalOptions& opts) {
  return over_sequences(preds, gts, [&](const Track& p, const Track& g) {
    return fraction_within(centre_errors(p, g, false, opts), opts.precision_px);
  });
}

double normalized_precision(const std::vector<Track>& preds, const std::vector<Track>& gts,
                            const EvalOptions& opts) {
  return over_sequences(preds, gts, [&](const Track& p, const Track& g) {
    return norm_precision_of(centre_errors(p, g, true, opts));
  });
}

SequenceMetrics evaluate_sequence(const Track& pred, const Track& gt, const EvalOptions& opts) {
  const auto ious = frame_ious(pred, gt, opts);
  SequenceMetrics m;
  m.frames = ious.size();
  m.ao = mean(ious);
  m.sr50 = fraction_above(ious, 0.5);
  m.sr75 = fraction_above(ious, 0.75);
  m.auc = auc_of(ious);
  m.p = fraction_within(centre_errors(pred, gt, false, opts), opts.precision_px);
  m.p_norm = norm_precision_of(centre_errors(pred, gt, true, opts));
  return m;
}

MetricReport evaluate(const std::vector<Track>& preds, const std::vector<Track>& gts,
                      const std::vector<std::string>& names, const EvalOptions& opts) {
  check_aligned(preds, gts);
  if (!names.empty() && names.size() != preds.size())
    throw std::invalid_argument("sequence name count does not match");
  MetricReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto m = evaluate_sequence(preds[i], gts[i], opts);
    m.name = names.empty() ? "seq" + std::to_string(i) : names[i];
    r.ao += m.ao;
    r.sr50 += m.sr50;
    r.sr75 += m.sr75;
    r.auc += m.auc;
    r.p += m.p;
    r.p_norm += m.p_norm;
    r.sequences.push_back(std::move(m));
  }
  if (!preds.empty()) {
    const double n = double(preds.size());
    r.ao /= n;
    r.sr50 /= n;
    r.sr75 /= n;
    r.auc /= n;
    r.p /= n;
    r.p_norm /= n;
  }
  return r;
}

std::string report_csv(const MetricReport& report) {
  std::string out = "sequence,frames,ao,sr50,sr75,auc,p,p_norm\n";
  char buf[256];
  auto row = [&](const std::string& name, std::size_t frames, double ao, double sr50, double sr75,
                 double auc, double p, double pn) {
    std::snprintf(buf, sizeof(buf), ",%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", frames, ao, sr50, sr75,
                  auc, p, pn);
    out += name + buf;
  };
  std::size_t total = 0;
  for (const auto& m : report.sequences) {
    row(m.name, m.frames, m.ao, m.sr50, m.sr75, m.auc, m.p, m.p_norm);
    total += m.frames;
  }
  row("mean", total, report.ao, report.sr50, report.sr75, report.auc, report.p, report.p_norm);
  return out;
}

void write_report(const std::filesystem::path& path, const MetricReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << report_csv(report);
}

std::string StepTable::render() const {
  std::string out = "metric ";
  char buf[64];
  for (std::size_t j = 0; j < steps(); ++j) {
    std::snprintf(buf, sizeof(buf), " %7s", ("step" + std::to_string(j + 1)).c_str());
    out += buf;
  }
  out += "\n";
  auto row = [&](const char* name, const std::vector<double>& v) {
    std::snprintf(buf, sizeof(buf), "%-7s", name);
    out += buf;
    for (double x : v) {
      std::snprintf(buf, sizeof(buf), " %7.1f", 100.0 * x);
      out += buf;
    }
    out += "\n";
  };
  row("AO", ao);
  row("SR0.5", sr50);
  row("SR0.75", sr75);
  return out;
}

std::string StepTable::csv() const {
  std::string out = "metric";
  for (std::size_t j = 0; j < steps(); ++j) out += ",step" + std::to_string(j + 1);
  out += "\n";
  char buf[32];
  auto row = [&](const char* name, const std::vector<double>& v) {
    out += name;
    for (double x : v) {
      std::snprintf(buf, sizeof(buf), ",%.6f", x);
      out += buf;
    }
    out += "\n";
  };
  row("ao", ao);
  row("sr50", sr50);
  row("sr75", sr75);
  return out;
}

StepTable step_ablation_table(const std::vector<std::vector<Track>>& block_preds,
                              const std::vector<Track>& gts, const EvalOptions& opts) {
  StepTable t;
  for (const auto& preds : block_preds) {
    t.ao.push_back(average_overlap(preds, gts, opts));
    t.sr50.push_back(success_rate(preds, gts, 0.5, opts));
    t.sr75.push_back(success_rate(preds, gts, 0.75, opts));
  }
  return t;
}

}  // namespace detrack
