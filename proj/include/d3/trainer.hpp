#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "d3/data.hpp"
#include "d3/discrepancy.hpp"
#include "d3/models.hpp"

namespace d3 {

enum class LossKind { mse, softmax_cross_entropy };

struct StopRule {
  double alpha = 0.0;
  int w = 5;
  int burn_in = -1;  // evaluations to ignore; <0 means max(2w, 5)
};

struct TrainConfig {
  long epochs = 1;
  int batch_size = 0;  // 0 = full batch
  std::uint64_t shuffle_seed = 0;
  nn::OptimizerConfig opt;
  LossKind loss = LossKind::mse;
  long eval_every_steps = 0;  // 0 = once per epoch
  // D_t and losses default to running aggregates of the forward passes the
  // updates already paid for; snapshot mode instead re-evaluates the frozen
  // parameters at each eval boundary (needed whenever a fixed-theta quantity
  // is compared against theory).
  bool snapshot_eval = false;
  bool track_oracle = true;  // d_N(f_t, f_clean) column when clean targets exist
  bool track_psnr = false;   // image-fitting runs
  bool snapshot_params = false;  // keep a theta copy per member at every eval
  StopRule rule;             // shapes the final report; live stop if enforce_stop
  bool enforce_stop = false;
  int threads = 1;
};

struct EvalRow {
  long step = 0;
  double d = 0.0;             // canonical pair (members 0,1)
  double d_mean_pairs = 0.0;  // mean over all pairs (J > 2), else equals d
  std::vector<double> loss;
  std::vector<double> oracle;
  std::vector<double> psnr;
};

struct RunLog {
  std::vector<EvalRow> rows;
  DiscrepancySeries series;
  StopReport stop;
  int J = 2;
  bool has_oracle = false;
  bool has_psnr = false;
  bool early_stopped = false;
  long stopped_at_step = -1;
  bool diverged = false;
  long diverged_step = -1;
  int diverged_model = -1;
  long total_steps = 0;
  int rule_w = 5;
  std::vector<std::uint64_t> batch_stream_hash;  // per member; equal iff lockstep held
  std::vector<std::vector<Vec>> theta_snapshots;  // [eval][member], when requested
  double wallclock_s = 0.0;  // never serialized into run artifacts
};

// Trains every cohort member through the identical batch sequence, logging
// the discrepancy series and optional oracle diagnostics. A non-finite loss
// or parameter in any member aborts the whole cohort (the log records where).
RunLog train_cohort(std::vector<ModelState>& cohort, const Dataset& ds, const TrainConfig& cfg);

// d_N(f, f_clean) under the task metric (sq_l2 for regression/inr,
// label disagreement for classification).
double oracle_error(const ModelState& m, const Dataset& ds);

// argmin of the logged oracle error for member j; earliest step on ties.
long optimal_stop(const RunLog& log, int j);

// Best logged PSNR of member j minus its PSNR at step tau.
double psnr_gap(const RunLog& log, int j, long tau);

MetricKind task_metric(Task t);

void write_run_csv(const RunLog& log, const std::string& path);

}  // namespace d3
