// SPDX-License-Identifier: Apache-2.0
//
// Tracking metrics. Every metric is computed per sequence over frames 2..N
// (the initialization frame is excluded) and then averaged over sequences.
//
//   AO       mean IoU
//   SR_tau   fraction of frames with IoU > tau (strict)
//   AUC      mean of SR over the 51 thresholds 0, 0.02, ..., 1.0; with the
//            strict comparison a perfect tracker scores 50/51
//   P        fraction of frames whose centre error is <= 20 px
//   P_norm   centre error divided componentwise by the ground-truth (w, h);
//            mean over 51 thresholds 0, 0.01, ..., 0.5 of the fraction
//            of frames with normalized error <= threshold
//
// Frames whose ground truth has zero area (target absent) count as failures
// (IoU 0, infinite centre error) unless `exclude_absent` is set.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "detrack/geometry.hpp"

namespace detrack {

using Track = std::vector<PixelBox>;

struct EvalOptions {
  bool exclude_absent = false;
  double precision_px = 20.0;
};

struct SequenceMetrics {
  std::string name;
  std::size_t frames = 0;  // frames scored
  double ao = 0.0;
  double sr50 = 0.0;
  double sr75 = 0.0;
  double auc = 0.0;
  double p = 0.0;
  double p_norm = 0.0;
};

struct MetricReport {
  double ao = 0.0;
  double sr50 = 0.0;
  double sr75 = 0.0;
  double auc = 0.0;
  double p = 0.0;
  double p_norm = 0.0;
  std::vector<SequenceMetrics> sequences;
};

/// Per-frame IoU over the scored frames of one sequence.
std::vector<double> frame_ious(const Track& pred, const Track& gt, const EvalOptions& opts = {});

double average_overlap(const std::vector<Track>& preds, const std::vector<Track>& gts,
                       const EvalOptions& opts = {});
double success_rate(const std::vector<Track>& preds, const std::vector<Track>& gts, double tau,
                    const EvalOptions& opts = {});
double success_auc(const std::vector<Track>& preds, const std::vector<Track>& gts,
                   const EvalOptions& opts = {});
double precision(const std::vector<Track>& preds, const std::vector<Track>& gts,
                 const EvalOptions& opts = {});
double normalized_precision(const std::vector<Track>& preds, const std::vector<Track>& gts,
                            const EvalOptions& opts = {});

SequenceMetrics evaluate_sequence(const Track& pred, const Track& gt,
                                  const EvalOptions& opts = {});
MetricReport evaluate(const std::vector<Track>& preds, const std::vector<Track>& gts,
                      const std::vector<std::string>& names = {}, const EvalOptions& opts = {});

/// Header `sequence,frames,ao,sr50,sr75,auc,p,p_norm`, one row per sequence
/// and a final `mean` row. Values use 6 decimals.
std::string report_csv(const MetricReport& report);
void write_report(const std::filesystem::path& path, const MetricReport& report);

/// Rows AO, SR0.5, SR0.75; one column per denoising block.
struct StepTable {
  std::vector<double> ao;
  std::vector<double> sr50;
  std::vector<double> sr75;

  std::size_t steps() const { return ao.size(); }
  std::string render() const;  // whitespace-aligned text
  std::string csv() const;
};

/// block_preds[j][s] is the track decoded from block j + 1 on sequence s.
StepTable step_ablation_table(const std::vector<std::vector<Track>>& block_preds,
                              const std::vector<Track>& gts, const EvalOptions& opts = {});

}  // namespace detrack
