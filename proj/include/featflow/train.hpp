#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "featflow/iff.hpp"
#include "featflow/synth.hpp"
#include "featflow/trl.hpp"

namespace featflow {

struct TrainConfig {
  int steps = 500;
  double lr = 0.5;
  // Pair sampling: the neighbor frame is drawn uniformly from
  // [t - temporal_radius, t + temporal_radius] excluding t itself.
  int temporal_radius = 10;
  TrlConfig trl;
  uint64_t seed = 0;
  // Interior border used when scoring against the ground truth; defaults to
  // the module's correlation range when <0.
  int eval_border = -1;
};

struct TrainReport {
  std::vector<double> losses;  // one entry per step
  std::vector<double> lrs;
  double initial_epe = 0.0;
  double final_epe = 0.0;
  double initial_aligned_mse = 0.0;  // warp-by-predicted-flow residual, before training
  double final_aligned_mse = 0.0;
  double unaligned_mse = 0.0;
  int steps = 0;
};

// Self-supervised loop: sample a frame pair, predict flow, take one SGD step
// on the transformation residual loss. The learning rate drops by 10x after
// the first 60% of steps. EPE and alignment MSE are measured against the
// stored ground-truth flows on adjacent frame pairs before and after.
// Throws if the loss ever turns non-finite.
TrainReport train_iff(IffModule& module, const SynthSpec& spec, const TrainConfig& cfg);

// Training log: "# key=value" summary lines followed by a step,loss,lr CSV
// table.
void write_train_log(std::ostream& os, const TrainReport& report);
void write_train_log_file(const std::string& path, const TrainReport& report);
TrainReport read_train_log_file(const std::string& path);

// Summary CSV (key,value rows) and a loss-curve SVG for a report.
void write_summary_csv(std::ostream& os, const TrainReport& report);
void write_curve_svg(std::ostream& os, const TrainReport& report);

}  // namespace featflow
