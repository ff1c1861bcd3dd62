#include "d3/discrepancy.hpp"

#include <cmath>

namespace d3 {

double d_n(const Mat& a, const Mat& b, MetricKind metric) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError("d_n: shape mismatch");
  if (a.rows() < 1) throw ConfigError("d_n: empty inputs");
  switch (metric) {
    case MetricKind::sq_l2:
      return (a - b).squaredNorm() / static_cast<double>(a.rows());
    case MetricKind::class_disagreement: {
      if (a.cols() != 1) throw ConfigError("d_n: class metric expects one label per row");
      double dis = 0.0;
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        if (a(i, 0) != b(i, 0)) dis += 1.0;
      return dis / static_cast<double>(a.rows());
    }
  }
  throw ConfigError("d_n: unknown metric");
}

double d_n_labels(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) throw ConfigError("d_n: label size mismatch");
  std::size_t dis = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) ++dis;
  return static_cast<double>(dis) / static_cast<double>(a.size());
}

void DiscrepancySeries::append(long step, double v, double mean) {
  if (!steps.empty() && step <= steps.back())
    throw ConfigError("series: steps must be strictly increasing");
  if (!(v >= 0.0) || !(mean >= 0.0)) throw ConfigError("series: negative or NaN discrepancy");
  steps.push_back(step);
  values.push_back(v);
  mean_pairs.push_back(mean);
}

std::vector<double> moving_average(const std::vector<double>& v, int w) {
  if (w < 1) throw ConfigError("moving_average: w must be >= 1");
  if (static_cast<std::size_t>(w) > v.size())
    throw ConfigError("moving_average: window longer than series");
  std::vector<double> out(v.size() - static_cast<std::size_t>(w) + 1);
  double acc = 0.0;
  for (int i = 0; i < w; ++i) acc += v[static_cast<std::size_t>(i)];
  out[0] = acc / w;
  for (std::size_t k = 1; k < out.size(); ++k) {
    acc += v[k + static_cast<std::size_t>(w) - 1] - v[k - 1];
    out[k] = acc / w;
  }
  return out;
}

StopReport stopping_time(const DiscrepancySeries& series, double alpha, int w, int burn_in) {
  const std::size_t n = series.size();
  if (w < 1) throw ConfigError("stopping_time: w must be >= 1");
  if (n < static_cast<std::size_t>(w) + 1)
    throw ConfigError("stopping_time: series shorter than w+1 evaluations");
  StopReport rep;
  rep.alpha = alpha;
  rep.burn_in_evals = burn_in >= 0 ? burn_in : std::max(2 * w, 5);

  const std::vector<double> sm = moving_average(series.values, w);
  auto scan = [&](double thr, bool& fired, long& tau) {
    fired = false;
    tau = -1;
    for (std::size_t k = static_cast<std::size_t>(rep.burn_in_evals); k + 1 < sm.size(); ++k) {
      const double dt = static_cast<double>(series.steps[k + 1] - series.steps[k]);
      const double deriv = (sm[k + 1] - sm[k]) / dt;
      if (deriv > thr) {
        fired = true;
        tau = series.steps[k];
        return;
      }
    }
  };
  scan(0.0, rep.triggered, rep.tau_0);
  if (alpha == 0.0) {
    rep.alpha_triggered = rep.triggered;
    rep.tau_alpha = rep.tau_0;
  } else {
    scan(alpha, rep.alpha_triggered, rep.tau_alpha);
  }

  if (rep.triggered) {
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (series.steps[i] > rep.tau_0 && series.values[i] > best) {
        best = series.values[i];
        rep.peak_step = series.steps[i];
      }
    }
    if (best >= 0.0) rep.d_star = best;
  }
  return rep;
}

double psnr_signal(const Vec& a, const Vec& b) {
  if (a.size() != b.size() || a.size() < 1) throw ConfigError("psnr: size mismatch");
  const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const ImageGray& a, const ImageGray& b) {
  if (a.width != b.width || a.height != b.height) throw ConfigError("psnr: dimension mismatch");
  return psnr_signal(a.pix, b.pix);
}

}  // namespace d3
