#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3/models.hpp"
#include "d3/trainer.hpp"

namespace d3 {

struct StopConfig {
  double alpha = 0.0;
  int w = 5;
  int burn_in = -1;
  bool enforce = false;
};

// One bag of dataset knobs; each task reads its own subset.
struct DatasetConfig {
  int n = 100;
  double lo = -2.0, hi = 2.0;
  double sigma = 1.0;  // regression target noise; INR pixel noise in 8-bit units
  std::uint64_t data_seed = 5;
  int k = 10;
  int input_dim = 1;
  double spread = 0.1;
  double corruption_rate = 0.0;
  std::uint64_t corruption_seed = 9;
  std::string image = "scene";  // builtin name or a .pgm path
  int width = 64, height = 64;
};

struct SweepSection {
  std::vector<double> rates;
  int pairs_per_rate = 3;
  std::uint64_t sweep_seed = 1;
  double prominence = 1.5;
  bool include_clean = false;
};

struct LinearSection {
  int instances = 100;
  int p_max = 20;
  int n_max = 50;
  double t_end = 3.0;
  int samples = 60;
  std::uint64_t seed = 1;
};

struct TheoremSection {
  double lr = 2e-3;
  long steps = 4000;
  long eval_every = 10;
  int stop_w = 5;
  long probe_every_evals = 10;
  int burst_halfwidth = 5;
  int min_probes = 20;
  double fd_lr = 1e-5;
  double budget_mb = 512.0;
};

struct ExperimentConfig {
  std::string task;  // toy_regression | blobs_classification | inr_denoise |
                     // linear_oracle | theorem_check | dq_sweep
  std::vector<std::uint64_t> seeds{1, 2};
  std::string out_dir = ".";
  DatasetConfig dataset;
  ArchSpec arch;  // kind/hidden/omega0/basis from config; dims filled per task
  bool arch_given = false;
  TrainConfig train;
  bool loss_given = false;  // explicit train.loss beats the task default
  StopConfig stop;
  SweepSection sweep;
  LinearSection linear;
  TheoremSection theorem;
  bool save_checkpoints = false;
};

// Parses and validates a config file. Unknown keys, missing required fields,
// and type mismatches all raise ConfigError naming the dotted field path;
// unreadable files raise IoError.
ExperimentConfig load_config(const std::string& path);

// The dataset a run-style task trains on (corruption already applied).
Dataset build_dataset(const ExperimentConfig& c);

// Task-appropriate architecture: config overrides when given, per-task
// defaults otherwise; input/output dims always come from the task.
ArchSpec resolve_arch(const ExperimentConfig& c, int input_dim, int output_dim);

}  // namespace d3
