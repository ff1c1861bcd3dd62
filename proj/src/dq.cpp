#include "d3/dq.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <thread>

#include "d3/csv.hpp"
#include "d3/rng.hpp"

namespace d3 {

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

long median_long(std::vector<long> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];  // lower middle keeps it an actual logged step
}

SweepPairOutcome train_one_pair(const Dataset& ds, const ArchSpec& arch,
                                const TrainConfig& train_cfg, double prominence,
                                std::uint64_t s1, std::uint64_t s2) {
  SweepPairOutcome out;
  out.seed1 = s1;
  out.seed2 = s2;
  std::vector<ModelState> cohort = make_identical_cohort(arch, {s1, s2});
  TrainConfig cfg = train_cfg;
  cfg.threads = 1;  // the sweep parallelizes across pairs, not inside them
  RunLog log = train_cohort(cohort, ds, cfg);
  out.diverged = log.diverged;
  if (out.diverged || log.series.size() == 0) return out;
  out.terminal = log.series.values.back();
  if (log.stop.triggered) {
    out.tau_0 = log.stop.tau_0;
    out.d_star = log.stop.d_star;
    out.has_peak = std::isfinite(out.d_star) && out.d_star >= prominence * out.terminal;
  }
  return out;
}

}  // namespace

SweepResult run_sweep(const Dataset& base, const std::vector<double>& rates,
                      const ArchSpec& arch, const TrainConfig& train_cfg,
                      const SweepConfig& sc) {
  base.validate();
  if (base.task != Task::classification)
    throw ConfigError("run_sweep: label-corruption sweeps need a classification task");
  if (rates.empty()) throw ConfigError("run_sweep: no rates given");
  std::set<double> uniq(rates.begin(), rates.end());
  if (uniq.size() != rates.size()) throw ConfigError("run_sweep: rates must be distinct");
  for (double r : rates)
    if (r < 0.0 || r > 1.0) throw ConfigError("run_sweep: rates must lie in [0,1]");
  if (sc.pairs_per_rate < 1) throw ConfigError("run_sweep: pairs_per_rate must be >= 1");

  SweepResult res;
  res.task = arch.to_string();
  res.raw.resize(rates.size());

  // Corruptions are cheap and deterministic; materialize them up front so
  // workers only ever read shared data.
  std::vector<Dataset> corrupted;
  corrupted.reserve(rates.size());
  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    const std::uint64_t cseed = Rng::derive(sc.seed, ri);
    corrupted.push_back(corrupt_labels(base, rates[ri], cseed));
    res.raw[ri].rate = rates[ri];
    res.raw[ri].e_realized = corrupted.back().noise.realized_e;
    res.raw[ri].pairs.resize(static_cast<std::size_t>(sc.pairs_per_rate));
  }

  struct Job {
    std::size_t rate_idx;
    int pair_idx;
  };
  std::vector<Job> jobs;
  for (std::size_t ri = 0; ri < rates.size(); ++ri)
    for (int p = 0; p < sc.pairs_per_rate; ++p) jobs.push_back({ri, p});

  std::vector<std::exception_ptr> job_errors(jobs.size());
  auto run_job = [&](std::size_t k) {
    const Job& j = jobs[k];
    try {
      const std::uint64_t salt =
          1000 + j.rate_idx * 100 + static_cast<std::uint64_t>(j.pair_idx) * 2;
      const std::uint64_t s1 = Rng::derive(sc.seed, salt);
      const std::uint64_t s2 = Rng::derive(sc.seed, salt + 1);
      res.raw[j.rate_idx].pairs[static_cast<std::size_t>(j.pair_idx)] =
          train_one_pair(corrupted[j.rate_idx], arch, train_cfg, sc.prominence, s1, s2);
    } catch (...) {
      job_errors[k] = std::current_exception();
    }
  };

  const int T = std::max(1, sc.threads);
  if (T == 1 || jobs.size() == 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) run_job(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    const int tn = std::min<int>(T, static_cast<int>(jobs.size()));
    workers.reserve(static_cast<std::size_t>(tn));
    for (int w = 0; w < tn; ++w)
      workers.emplace_back([&] {
        for (;;) {
          const std::size_t k = next.fetch_add(1);
          if (k >= jobs.size()) return;
          run_job(k);
        }
      });
    for (std::thread& w : workers) w.join();
  }
  for (const std::exception_ptr& e : job_errors)
    if (e) std::rethrow_exception(e);

  // Aggregate in fixed rate order.
  std::vector<std::pair<double, double>> fit_pts;
  for (const SweepPointRaw& raw : res.raw) {
    SweepPoint pt;
    pt.rate = raw.rate;
    pt.e_realized = raw.e_realized;
    std::vector<double> peaks;
    std::vector<long> taus;
    for (const SweepPairOutcome& p : raw.pairs)
      if (!p.diverged && p.has_peak) {
        peaks.push_back(p.d_star);
        taus.push_back(p.tau_0);
      }
    pt.pairs_used = static_cast<int>(peaks.size());
    if (!peaks.empty()) {
      pt.usable = true;
      pt.d_star = median_of(peaks);
      pt.tau_0 = median_long(taus);
    }
    res.points.push_back(pt);
    const bool clean = pt.e_realized <= sc.e_floor;
    if (pt.usable && (sc.include_clean_in_fit || !clean))
      fit_pts.push_back({pt.e_realized, pt.d_star});
  }

  if (fit_pts.size() >= 3) {
    res.fit = fit_line(fit_pts);
    res.fit_valid = true;
  }
  return res;
}

LineFit fit_line(const std::vector<std::pair<double, double>>& pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 3) throw ConfigError("fit_line: need at least 3 points");
  double mx = 0, my = 0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0.0) throw ConfigError("fit_line: all E values identical");

  LineFit f;
  f.n = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0, ss_tot = 0;
  for (const auto& [x, y] : pts) {
    const double r = y - (f.slope * x + f.intercept);
    ss_res += r * r;
    ss_tot += (y - my) * (y - my);
  }
  f.r_squared = (ss_tot == 0.0) ? (ss_res == 0.0 ? 1.0 : 0.0) : 1.0 - ss_res / ss_tot;
  f.rse = (n > 2) ? std::sqrt(ss_res / (n - 2)) : 0.0;
  return f;
}

NoiseEstimate estimate_noise(const LineFit& fit, double d_star, bool clamp01) {
  if (!std::isfinite(d_star)) throw ConfigError("estimate_noise: d_star is not finite");
  const double tol = 1e-12 * std::max(1.0, std::abs(fit.intercept));
  if (std::abs(fit.slope) <= tol)
    throw ConfigError("estimate_noise: fit uninformative (slope too close to zero)");
  NoiseEstimate e;
  e.d_star_observed = d_star;
  e.e_hat = (d_star - fit.intercept) / fit.slope;
  if (clamp01) e.e_hat = std::clamp(e.e_hat, 0.0, 1.0);
  e.ci_halfwidth = fit.rse / std::abs(fit.slope);
  return e;
}

void write_sweep_csv(const SweepResult& res, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"rate", "E_realized", "D_star", "tau_0", "pairs_used", "usable"});
  for (const SweepPoint& p : res.points) {
    csv.begin_row();
    csv.field(p.rate);
    csv.field(p.e_realized);
    if (p.usable) csv.field(p.d_star);
    else csv.empty_field();
    if (p.tau_0 >= 0) csv.field(static_cast<long>(p.tau_0));
    else csv.empty_field();
    csv.field(static_cast<long>(p.pairs_used));
    csv.field(std::string(p.usable ? "1" : "0"));
    csv.end_row();
  }
}

}  // namespace d3
