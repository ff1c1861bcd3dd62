#include "d3/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "d3/discrepancy.hpp"

namespace d3 {

namespace {

// Appends output values and per-channel gradient rows of one model.
void probe_one(const ModelState& m, const Mat& X, Mat& f, std::vector<Mat>& rows) {
  nn::Tape tape;
  ForwardGraph fg = stage_forward(tape, m, X);
  f = tape.value(fg.out);
  const int C = static_cast<int>(f.cols());
  rows.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c)
    tape.backward_rows(fg.out, c, fg.params, m.theta, rows[static_cast<std::size_t>(c)]);
}

}  // namespace

KernelProbe take_probe(const ModelState& m1, const ModelState& m2, const Dataset& ds, long step,
                       double lr, double budget_mb) {
  if (m1.arch.to_string() != m2.arch.to_string())
    throw ConfigError("kernel probe: the two models must share one architecture");
  ds.validate();
  if (ds.xs.cols() != m1.arch.input_dim)
    throw ConfigError("kernel probe: dataset input_dim does not match the models");

  const double N = static_cast<double>(ds.n());
  const double P = static_cast<double>(m1.theta.size());
  const double C = static_cast<double>(m1.arch.output_dim);
  const double need_mb = 2.0 * N * P * C * 8.0 / (1024.0 * 1024.0);
  if (need_mb > budget_mb) {
    std::ostringstream os;
    os << "kernel probe: gradient rows need " << need_mb << " MiB (N=" << N << ", P=" << P
       << ", channels=" << C << "), budget is " << budget_mb << " MiB";
    throw ConfigError(os.str());
  }

  KernelProbe pr;
  pr.step = step;
  pr.flow_time = static_cast<double>(step) * lr;
  pr.y_noisy = ds.ys_noisy;
  pr.y_clean = ds.ys_clean;
  probe_one(m1, ds.xs, pr.f1, pr.rows1);
  probe_one(m2, ds.xs, pr.f2, pr.rows2);
  return pr;
}

double kernel_inner(const Mat& g, const Mat& h, const std::vector<Mat>& rows) {
  if (rows.empty()) throw ConfigError("kernel_inner: no gradient rows");
  const Eigen::Index N = rows.front().rows();
  const Eigen::Index P = rows.front().cols();
  if (g.rows() != N || h.rows() != N || g.cols() != static_cast<Eigen::Index>(rows.size()) ||
      h.cols() != g.cols())
    throw ConfigError("kernel_inner: value matrices must be N x channels");

  Vec u = Vec::Zero(P), v = Vec::Zero(P);
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const Eigen::Index ci = static_cast<Eigen::Index>(c);
    u.noalias() += rows[c].transpose() * g.col(ci);
    v.noalias() += rows[c].transpose() * h.col(ci);
  }
  return u.dot(v) / (static_cast<double>(N) * static_cast<double>(N));
}

double kernel_inner_double_sum(const Mat& g, const Mat& h, const std::vector<Mat>& rows) {
  if (rows.empty()) throw ConfigError("kernel_inner_double_sum: no gradient rows");
  const Eigen::Index N = rows.front().rows();
  const std::size_t C = rows.size();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t d = 0; d < C; ++d)
          acc += g(i, static_cast<Eigen::Index>(c)) *
                 rows[c].row(i).dot(rows[d].row(j)) *
                 h(j, static_cast<Eigen::Index>(d));
  return acc / (static_cast<double>(N) * static_cast<double>(N));
}

double discrepancy_derivative_kernel(const KernelProbe& probe) {
  const Mat diff = probe.f1 - probe.f2;
  const double t1 = kernel_inner(diff, probe.f1 - probe.y_noisy, probe.rows1);
  const double t2 = kernel_inner(-diff, probe.f2 - probe.y_noisy, probe.rows2);
  return -4.0 * (t1 + t2);
}

KernelReport check_theorem(const KernelProbe& probe) {
  if (probe.y_clean.size() == 0)
    throw ConfigError("check_theorem: probe carries no clean targets");

  KernelReport r;
  r.t = probe.step;
  r.flow_time = probe.flow_time;

  const Mat e1 = probe.f1 - probe.y_clean;   // f(1) - f_clean
  const Mat e2 = probe.f2 - probe.y_clean;   // f(2) - f_clean
  const Mat nz = probe.y_noisy - probe.y_clean;

  r.a1 = kernel_inner(e2, e1, probe.rows1);
  r.a2 = kernel_inner(e1, e2, probe.rows2);
  r.b1 = kernel_inner(e2, nz, probe.rows1);
  r.b2 = kernel_inner(e1, nz, probe.rows2);
  r.d1 = -kernel_inner(e1, probe.f1 - probe.y_noisy, probe.rows1);
  r.d2 = -kernel_inner(e2, probe.f2 - probe.y_noisy, probe.rows2);
  r.delta_min = 2.0 * std::max(std::abs(r.a1), std::abs(r.a2));
  r.eps_min = 2.0 * std::max(std::abs(r.b1), std::abs(r.b2));

  // lhs through an independent contraction; the report identity
  // lhs = sum_j (d_j + a_j - b_j) then holds up to bilinearity roundoff.
  const Mat diff = probe.f1 - probe.f2;
  r.lhs = -kernel_inner(diff, probe.f1 - probe.y_noisy, probe.rows1) -
          kernel_inner(-diff, probe.f2 - probe.y_noisy, probe.rows2);
  r.identity_gap = std::abs(r.lhs - (r.d1 + r.a1 - r.b1) - (r.d2 + r.a2 - r.b2));

  const double budget = r.delta_min + r.eps_min;
  const double scale = std::max({std::abs(r.lhs), budget, std::abs(r.d1), std::abs(r.d2), 1e-30});
  const double tol = 1e-8 * scale;

  // Result 1: lhs > delta + eps implies some member's oracle error is rising.
  r.result1_pass = (r.lhs <= budget + tol) || (std::max(r.d1, r.d2) > -tol);
  // Result 2: both oracle errors rising implies lhs > -(delta + eps).
  r.result2_pass = !(std::min(r.d1, r.d2) > tol) || (r.lhs > -budget - tol);
  return r;
}

double alpha_suggestion(const std::vector<KernelReport>& reports) {
  if (reports.empty()) throw ConfigError("alpha_suggestion: no reports");
  std::vector<double> v;
  v.reserve(reports.size());
  for (const KernelReport& r : reports) v.push_back(r.delta_min + r.eps_min);
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Theorem runner
// ---------------------------------------------------------------------------

namespace {

struct GdPair {
  ModelState m1, m2;
  nn::ParamVector g1, g2;  // gradient scratch, same layout as theta

  void step(const Dataset& ds, double lr) {
    step_one(m1, g1, ds, lr);
    step_one(m2, g2, ds, lr);
  }

  static void step_one(ModelState& m, nn::ParamVector& g, const Dataset& ds, double lr) {
    nn::Tape tape;
    ForwardGraph fg = stage_forward(tape, m, ds.xs);
    const int loss = tape.mse(fg.out, ds.ys_noisy);
    tape.backward(loss, fg.params, g);
    m.theta.data -= lr * g.data;
    nn::check_finite(m.theta.data, "theorem run parameters");
  }
};

double pair_discrepancy(const ModelState& a, const ModelState& b, const Mat& X) {
  return d_n(forward(a, X), forward(b, X), MetricKind::sq_l2);
}

// D along the straight-line flow direction theta_j - eps * grad_j.
double fd_probe_value(const GdPair& p, const Dataset& ds, double eps) {
  ModelState a = p.m1, b = p.m2;
  a.theta.data -= eps * p.g1.data;
  b.theta.data -= eps * p.g2.data;
  return pair_discrepancy(a, b, ds.xs);
}

}  // namespace

TheoremRunResult run_theorem_check(const Dataset& ds, const ArchSpec& arch,
                                   std::uint64_t seed1, std::uint64_t seed2,
                                   const TheoremRunConfig& cfg) {
  arch.validate();
  ds.validate();
  if (ds.task == Task::classification)
    throw ConfigError("theorem check: squared-L2 flow calculus needs a regression task");
  if (!ds.has_clean())
    throw ConfigError("theorem check: dataset must carry clean targets");
  if (cfg.lr <= 0.0 || cfg.steps <= 0 || cfg.eval_every <= 0 || cfg.stop_w < 1)
    throw ConfigError("theorem check: lr, steps, eval_every, stop_w must be positive");
  if (seed1 == seed2) throw ConfigError("theorem check: seeds must differ");

  GdPair pair{init_model(arch, seed1), init_model(arch, seed2), {}, {}};
  pair.g1 = pair.m1.theta;
  pair.g2 = pair.m2.theta;

  TheoremRunResult out;
  struct Snap {
    long step;
    Vec th1, th2;
  };
  std::vector<Snap> snaps;

  auto eval_now = [&](long step) {
    out.series.append(step, pair_discrepancy(pair.m1, pair.m2, ds.xs));
    snaps.push_back({step, pair.m1.theta.data, pair.m2.theta.data});
  };

  eval_now(0);
  for (long t = 1; t <= cfg.steps; ++t) {
    pair.step(ds, cfg.lr);
    if (t % cfg.eval_every == 0) eval_now(t);
  }

  out.stop = stopping_time(out.series, 0.0, cfg.stop_w);

  // Probe schedule: a coarse comb over the whole run plus a dense burst
  // around tau_0, topped up if the run is too short for the comb alone.
  const std::size_t n_evals = snaps.size();
  std::set<std::size_t> picks;
  const std::size_t stride = static_cast<std::size_t>(std::max<long>(1, cfg.probe_every_evals));
  for (std::size_t k = 0; k < n_evals; k += stride) picks.insert(k);
  picks.insert(n_evals - 1);
  if (out.stop.triggered) {
    std::size_t k0 = 0;
    for (std::size_t k = 0; k < n_evals; ++k)
      if (out.series.steps[k] == out.stop.tau_0) { k0 = k; break; }
    const long lo = static_cast<long>(k0) - cfg.burst_halfwidth;
    const long hi = static_cast<long>(k0) + cfg.burst_halfwidth;
    for (long k = std::max<long>(0, lo); k <= hi && k < static_cast<long>(n_evals); ++k)
      picks.insert(static_cast<std::size_t>(k));
  }
  for (std::size_t k = 0; k < n_evals && picks.size() < static_cast<std::size_t>(cfg.min_probes);
       ++k)
    picks.insert(k);

  // Frozen-theta reports and flow-derivative cross-checks at every pick.
  for (std::size_t k : picks) {
    GdPair at = pair;
    at.m1.theta.data = snaps[k].th1;
    at.m2.theta.data = snaps[k].th2;
    KernelProbe probe = take_probe(at.m1, at.m2, ds, snaps[k].step, cfg.lr, cfg.budget_mb);
    out.reports.push_back(check_theorem(probe));

    nn::Tape tape;
    ForwardGraph fg1 = stage_forward(tape, at.m1, ds.xs);
    tape.backward(tape.mse(fg1.out, ds.ys_noisy), fg1.params, at.g1);
    tape.clear();
    ForwardGraph fg2 = stage_forward(tape, at.m2, ds.xs);
    tape.backward(tape.mse(fg2.out, ds.ys_noisy), fg2.params, at.g2);

    FdCheck fd;
    fd.step = snaps[k].step;
    fd.analytic = 4.0 * out.reports.back().lhs;
    fd.fd = (fd_probe_value(at, ds, cfg.fd_lr) - fd_probe_value(at, ds, -cfg.fd_lr)) /
            (2.0 * cfg.fd_lr);
    fd.rel_err = std::abs(fd.fd - fd.analytic) /
                 std::max({std::abs(fd.analytic), std::abs(fd.fd), 1e-300});
    out.fd_checks.push_back(fd);
  }

  double ref = 0.0;
  for (const FdCheck& f : out.fd_checks) ref = std::max(ref, std::abs(f.analytic));
  for (FdCheck& f : out.fd_checks)
    f.resolvable = std::abs(f.analytic) >= std::max(1e-12, 1e-3 * ref);

  // Threshold suggestion from the reports nearest tau_0 (all of them when
  // the rule never fired).
  std::vector<KernelReport> near;
  if (out.stop.triggered) {
    const long window = static_cast<long>(cfg.burst_halfwidth) * cfg.eval_every;
    for (const KernelReport& r : out.reports)
      if (std::labs(r.t - out.stop.tau_0) <= window) near.push_back(r);
  }
  if (near.empty()) near = out.reports;
  out.alpha_flow = alpha_suggestion(near);
  out.alpha_step = 4.0 * cfg.lr * out.alpha_flow;
  StopReport with_alpha = stopping_time(out.series, out.alpha_step, cfg.stop_w);
  out.tau_alpha_step = with_alpha.alpha_triggered ? with_alpha.tau_alpha : -1;
  return out;
}

}  // namespace d3
