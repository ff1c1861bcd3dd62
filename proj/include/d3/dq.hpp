#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "d3/trainer.hpp"

namespace d3 {

// One trained pair at one corruption rate.
struct SweepPairOutcome {
  std::uint64_t seed1 = 0, seed2 = 0;
  bool diverged = false;
  bool has_peak = false;  // tau_0 fired and the peak clears the prominence bar
  double d_star = std::numeric_limits<double>::quiet_NaN();
  double terminal = std::numeric_limits<double>::quiet_NaN();
  long tau_0 = -1;
};

struct SweepPointRaw {
  double rate = 0.0;
  double e_realized = 0.0;  // label disagreement with the clean set
  std::vector<SweepPairOutcome> pairs;
};

// Per-rate aggregate: D* is the median over the pairs that produced a real
// peak; diverged or peakless pairs do not contribute.
struct SweepPoint {
  double rate = 0.0;
  double e_realized = 0.0;
  double d_star = std::numeric_limits<double>::quiet_NaN();
  long tau_0 = -1;
  int pairs_used = 0;
  bool usable = false;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double rse = 0.0;  // residual standard error, sqrt(SS_res / (n-2))
  int n = 0;
};

struct SweepConfig {
  int pairs_per_rate = 3;
  double prominence = 1.5;  // peak counts only if d_star >= prominence * terminal
  bool include_clean_in_fit = false;  // rates below e_floor enter the fit only on request
  double e_floor = 1e-6;
  int threads = 1;
  std::uint64_t seed = 1;  // every corruption/init seed derives from this
};

struct SweepResult {
  std::vector<SweepPointRaw> raw;  // fixed rate order, every rate present
  std::vector<SweepPoint> points;
  LineFit fit;
  bool fit_valid = false;
  std::string task;
};

// Corrupts the base labels at each rate, trains fresh pairs in lockstep,
// extracts the peak discrepancy, and fits D* against the realized noise
// level. Diverged pairs are flagged and skipped; the sweep continues.
SweepResult run_sweep(const Dataset& base, const std::vector<double>& rates,
                      const ArchSpec& arch, const TrainConfig& train_cfg,
                      const SweepConfig& sc);

// Ordinary least squares y = slope*x + intercept over (E, D*) points.
LineFit fit_line(const std::vector<std::pair<double, double>>& pts);

struct NoiseEstimate {
  double d_star_observed = 0.0;
  double e_hat = 0.0;
  double ci_halfwidth = 0.0;  // residual standard error mapped through the slope
};

// Inverts the fitted line at an observed peak discrepancy. `clamp01` keeps
// the estimate inside the classification range.
NoiseEstimate estimate_noise(const LineFit& fit, double d_star, bool clamp01 = true);

void write_sweep_csv(const SweepResult& res, const std::string& path);

}  // namespace d3
