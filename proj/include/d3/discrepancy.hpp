#pragma once

#include <limits>
#include <vector>

#include "d3/data.hpp"
#include "d3/nn.hpp"

namespace d3 {

enum class MetricKind { sq_l2, class_disagreement };

// Mean pointwise metric over aligned sample rows. sq_l2 compares output
// vectors; class_disagreement expects one predicted label per row (as
// produced by argmax_rows) and averages the 0/1 disagreement indicator.
double d_n(const Mat& a, const Mat& b, MetricKind metric);
double d_n_labels(const std::vector<int>& a, const std::vector<int>& b);

// Time series of the paired discrepancy. `values` tracks the canonical pair
// (members 0 and 1); `mean_pairs` additionally averages over all pairs when
// a cohort has more than two members.
struct DiscrepancySeries {
  std::vector<long> steps;
  std::vector<double> values;
  std::vector<double> mean_pairs;

  void append(long step, double v) { append(step, v, v); }
  void append(long step, double v, double mean);
  std::size_t size() const { return steps.size(); }
};

// Forward moving average: out[k] = mean(v[k..k+w-1]), defined for
// k <= n - w. The trailing w-1 positions have no smoothed value.
std::vector<double> moving_average(const std::vector<double>& v, int w);

struct StopReport {
  bool triggered = false;        // the alpha = 0 rule fired
  long tau_0 = -1;
  bool alpha_triggered = false;  // the configured-alpha rule fired
  long tau_alpha = -1;
  double alpha = 0.0;
  double d_star = std::numeric_limits<double>::quiet_NaN();  // max D_t past tau_0
  long peak_step = -1;
  int burn_in_evals = 0;
};

// Derivative-threshold stopping rule. Scans the forward-smoothed series'
// discrete derivative (D~[k+1]-D~[k])/(step[k+1]-step[k]) in step order and
// fires at the first index past burn-in where it exceeds alpha (strictly).
// The peak statistic d_star is the raw-series maximum at steps after tau_0.
// burn_in < 0 selects the default of max(2w, 5) evaluations.
StopReport stopping_time(const DiscrepancySeries& series, double alpha, int w, int burn_in = -1);

// 10*log10(1/MSE) for signals in [0,1]; +inf when the inputs are identical.
double psnr(const ImageGray& a, const ImageGray& b);
double psnr_signal(const Vec& a, const Vec& b);

}  // namespace d3
