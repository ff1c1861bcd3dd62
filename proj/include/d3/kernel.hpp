#pragma once

#include <cstdint>
#include <vector>

#include "d3/data.hpp"
#include "d3/discrepancy.hpp"
#include "d3/models.hpp"

namespace d3 {

// Frozen-parameter snapshot of a model pair: per-sample gradient rows
// (one N x P block per output channel) plus the residual vectors that the
// kernel inner products combine.
struct KernelProbe {
  long step = 0;
  double flow_time = 0.0;        // steps * lr for plain gradient descent
  std::vector<Mat> rows1, rows2; // per channel: N x P
  Mat f1, f2;                    // N x C model outputs
  Mat y_noisy, y_clean;          // N x C targets
};

// Builds a probe at the pair's current parameters. Refuses to materialize
// gradient rows beyond `budget_mb` (N * P * channels * 2 models, 8 bytes per
// entry).
KernelProbe take_probe(const ModelState& m1, const ModelState& m2, const Dataset& ds, long step,
                       double lr, double budget_mb = 512.0);

// <g,h>_K = (1/N^2) sum_{i,j} g(x_i)^T K(x_i,x_j) h(x_j), evaluated in the
// factored form (1/N^2) (sum_i sum_c g_ic R_c[i,:]) . (sum_j sum_c h_jc R_c[j,:])
// so the N x N kernel matrix never exists. g and h are N x C value matrices
// aligned with the gradient rows R.
double kernel_inner(const Mat& g, const Mat& h, const std::vector<Mat>& rows);

// Same quantity through the explicit N x N kernel matrix; O(N^2 P), test
// oracle for small N.
double kernel_inner_double_sum(const Mat& g, const Mat& h, const std::vector<Mat>& rows);

// d/dt d_N(f1, f2) under gradient flow d theta/dt = -grad d_N(f, y_noisy)
// with the squared-L2 metric. The chain rule puts a factor 2 on each of the
// two gradients involved, hence
//   dD/dt = -4 [ <f1 - f2, f1 - y>_{K1} + <f2 - f1, f2 - y>_{K2} ].
double discrepancy_derivative_kernel(const KernelProbe& probe);

// Inner-product audit of the two stopping-theorem implications at one step.
// All stored quantities are plain kernel inner products (quarter scale: the
// physical dD/dt and oracle-error derivatives are 4x lhs and 4x d_j); both
// implications are scale-invariant, so they are checked where they are
// stated. delta_min and eps_min are the smallest constants satisfying the
// near-orthogonality conditions at this step, measured, not assumed.
struct KernelReport {
  long t = 0;
  double flow_time = 0.0;
  double a1 = 0, a2 = 0;  // <f(-j) - f_clean, f(j) - f_clean>_{K(j)}
  double b1 = 0, b2 = 0;  // <f(-j) - f_clean, y_noisy - f_clean>_{K(j)}
  double d1 = 0, d2 = 0;  // -<f(j) - f_clean, f(j) - y_noisy>_{K(j)}  (oracle derivative / 4)
  double delta_min = 0;   // 2 max_j |a_j|
  double eps_min = 0;     // 2 max_j |b_j|
  double lhs = 0;         // -sum_j <f(j) - f(-j), f(j) - y>_{K(j)}  (dD/dt / 4)
  double identity_gap = 0;  // |lhs - sum_j (d_j + a_j - b_j)|, bilinearity residual
  bool result1_pass = false;  // lhs > delta+eps  =>  max_j d_j > 0
  bool result2_pass = false;  // min_j d_j > 0    =>  lhs > -(delta+eps)
};

KernelReport check_theorem(const KernelProbe& probe);

// Recommended threshold: median of (delta_min + eps_min) over reports taken
// near tau_0. Quarter-scale flow units; multiply by 4*lr to compare against
// a per-step derivative of the logged series.
double alpha_suggestion(const std::vector<KernelReport>& reports);

// ---------------------------------------------------------------------------
// Full-batch plain-GD runner that snapshots parameters at a fixed stride so
// probes and finite-difference checks evaluate frozen-theta quantities.
// ---------------------------------------------------------------------------

struct TheoremRunConfig {
  double lr = 2e-3;
  long steps = 4000;
  long eval_every = 10;
  int stop_w = 5;
  long probe_every_evals = 10;  // plus a dense burst around tau_0
  int burst_halfwidth = 5;
  int min_probes = 20;
  double fd_lr = 1e-5;          // step size of the finite-difference cross-check
  double budget_mb = 512.0;
};

struct FdCheck {
  long step = 0;
  double analytic = 0.0;  // physical scale (4x lhs)
  double fd = 0.0;
  double rel_err = 0.0;
  bool resolvable = true;  // large enough against the run's derivative scale
};

struct TheoremRunResult {
  DiscrepancySeries series;
  StopReport stop;
  std::vector<KernelReport> reports;
  std::vector<FdCheck> fd_checks;
  double alpha_flow = 0.0;   // alpha_suggestion over reports near tau_0
  double alpha_step = 0.0;   // 4 * lr * alpha_flow, per-step units
  long tau_alpha_step = -1;  // trigger of the suggested-alpha rule, -1 if never
};

TheoremRunResult run_theorem_check(const Dataset& ds, const ArchSpec& arch,
                                   std::uint64_t seed1, std::uint64_t seed2,
                                   const TheoremRunConfig& cfg);

}  // namespace d3
