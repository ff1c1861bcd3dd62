#include "d3/runner.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "d3/csv.hpp"
#include "d3/dq.hpp"
#include "d3/kernel.hpp"
#include "d3/linear_flow.hpp"
#include "d3/rng.hpp"

namespace d3 {

namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::atomic<int> g_log_level{static_cast<int>(LogLevel::info)};

const char* level_tag(LogLevel lv) {
  switch (lv) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    default: return "error";
  }
}

std::string out_path(const ExperimentConfig& c, const std::string& name) {
  fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + c.out_dir + "': " + ec.message());
  return (dir / name).string();
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << body;
  if (!out) throw IoError("write failed for '" + path + "'");
}

ojson json_or_null(bool present, double v) { return present ? ojson(v) : ojson(nullptr); }
ojson json_or_null_step(long step) { return step >= 0 ? ojson(step) : ojson(nullptr); }

long stop_step(const StopReport& st) {
  if (st.alpha_triggered) return st.tau_alpha;
  return st.triggered ? st.tau_0 : -1;
}

void write_summary(const RunLog& log, const Dataset& ds, const ExperimentConfig& c,
                   const std::string& path) {
  const StopReport& st = log.stop;
  const long tau_stop = stop_step(st);

  ojson s;
  s["schema_version"] = 1;
  s["task"] = c.task;
  s["tau_0"] = st.triggered ? ojson(st.tau_0) : ojson(nullptr);
  s["tau_alpha"] = st.alpha_triggered ? ojson(st.tau_alpha) : ojson(nullptr);
  s["alpha"] = st.alpha;
  s["d_star"] = json_or_null(st.triggered && std::isfinite(st.d_star), st.d_star);
  s["peak_step"] = json_or_null_step(st.peak_step);
  s["d_terminal"] =
      log.series.size() ? ojson(log.series.values.back()) : ojson(nullptr);
  s["total_steps"] = log.total_steps;
  s["early_stopped"] = log.early_stopped;
  s["diverged"] = log.diverged;
  if (log.diverged) {
    s["diverged_step"] = log.diverged_step;
    s["diverged_network"] = log.diverged_model + 1;  // 1-based, like the CSV columns
  }

  if (log.has_oracle) {
    ojson arr = ojson::array();
    for (int j = 0; j < log.J; ++j) arr.push_back(optimal_stop(log, j));
    s["tau_opt_per_network"] = arr;
  } else {
    s["tau_opt_per_network"] = nullptr;
  }

  if (log.has_psnr) {
    ojson at_stop = ojson::array(), at_opt = ojson::array(), gap = ojson::array();
    for (int j = 0; j < log.J; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      double at_tau = std::numeric_limits<double>::quiet_NaN();
      for (const EvalRow& r : log.rows) {
        const double v = r.psnr[static_cast<std::size_t>(j)];
        if (v > best) best = v;
        if (r.step == tau_stop) at_tau = v;
      }
      at_opt.push_back(best);
      if (tau_stop >= 0) {
        at_stop.push_back(at_tau);
        gap.push_back(psnr_gap(log, j, tau_stop));
      }
    }
    s["psnr_at_stop"] = tau_stop >= 0 ? at_stop : ojson(nullptr);
    s["psnr_at_opt"] = at_opt;
    s["psnr_gap"] = tau_stop >= 0 ? gap : ojson(nullptr);
  } else {
    s["psnr_at_stop"] = nullptr;
    s["psnr_at_opt"] = nullptr;
    s["psnr_gap"] = nullptr;
  }

  if (ds.noise.kind == NoiseMeta::Kind::label_corruption) {
    s["corruption_rate"] = ds.noise.corruption_rate;
    s["e_realized"] = ds.noise.realized_e;
  } else if (ds.noise.kind == NoiseMeta::Kind::gaussian) {
    s["sigma"] = ds.noise.sigma;
  }
  write_text(path, s.dump(2) + "\n");
}

long eval_index_of_step(const RunLog& log, long step) {
  for (std::size_t k = 0; k < log.series.steps.size(); ++k)
    if (log.series.steps[k] == step) return static_cast<long>(k);
  return -1;
}

void write_reconstructions(const RunLog& log, const ArchSpec& arch, const ExperimentConfig& c,
                           const Dataset& ds, int width, int height) {
  if (log.theta_snapshots.size() != log.rows.size()) return;
  const long tau_stop = stop_step(log.stop);

  auto emit = [&](long eval_idx, int j, const std::string& name) {
    if (eval_idx < 0) return;
    ModelState m = init_model(arch, c.seeds[static_cast<std::size_t>(j)]);
    m.theta.data = log.theta_snapshots[static_cast<std::size_t>(eval_idx)][static_cast<std::size_t>(j)];
    const ImageGray img = image_from_outputs(forward(m, ds.xs), width, height);
    save_pgm(img, out_path(c, name));
  };

  for (int j = 0; j < log.J; ++j) {
    const std::string tag = "net" + std::to_string(j + 1);
    if (tau_stop >= 0) emit(eval_index_of_step(log, tau_stop), j, "recon_stopped_" + tag + ".pgm");
    emit(eval_index_of_step(log, optimal_stop(log, j)), j, "recon_optimal_" + tag + ".pgm");
  }
}

ImageGray resolve_image(const DatasetConfig& d) {
  if (d.image.size() > 4 && d.image.substr(d.image.size() - 4) == ".pgm")
    return load_pgm(d.image);
  return make_image(d.image, d.width, d.height);
}

}  // namespace

void set_log_level(LogLevel lv) { g_log_level.store(static_cast<int>(lv)); }

bool parse_log_level(const std::string& name, LogLevel& out) {
  if (name == "debug") out = LogLevel::debug;
  else if (name == "info") out = LogLevel::info;
  else if (name == "warn") out = LogLevel::warn;
  else if (name == "error") out = LogLevel::error;
  else return false;
  return true;
}

void logf(LogLevel lv, const std::string& msg) {
  if (static_cast<int>(lv) >= g_log_level.load())
    std::cerr << "[" << level_tag(lv) << "] " << msg << "\n";
}

int cmd_run(const ExperimentConfig& c) {
  const bool inr = c.task == "inr_denoise";
  if (c.task != "toy_regression" && c.task != "blobs_classification" && !inr)
    throw ConfigError("run: task '" + c.task + "' belongs to a different subcommand");

  Dataset ds;
  int width = c.dataset.width, height = c.dataset.height;
  if (inr) {
    const ImageGray img = resolve_image(c.dataset);
    width = img.width;
    height = img.height;
    ds = gen_inr_dataset(img, c.dataset.sigma, c.dataset.data_seed);
  } else {
    ds = build_dataset(c);
  }

  const bool classify = ds.task == Task::classification;
  const ArchSpec arch = resolve_arch(c, static_cast<int>(ds.xs.cols()),
                                     classify ? ds.num_classes : 1);

  TrainConfig tc = c.train;
  if (!c.loss_given) tc.loss = classify ? LossKind::softmax_cross_entropy : LossKind::mse;
  if (tc.eval_every_steps < 0) tc.eval_every_steps = inr ? 50 : 0;
  tc.rule = StopRule{c.stop.alpha, c.stop.w, c.stop.burn_in};
  tc.enforce_stop = c.stop.enforce;
  if (inr) {
    tc.track_psnr = true;
    tc.snapshot_params = true;
  }

  std::vector<ModelState> cohort = make_identical_cohort(arch, c.seeds);
  logf(LogLevel::info, "run: " + c.task + ", " + arch.to_string() + ", N=" +
                           std::to_string(ds.n()) + ", epochs=" + std::to_string(tc.epochs));
  RunLog log = train_cohort(cohort, ds, tc);

  write_run_csv(log, out_path(c, "run.csv"));
  write_summary(log, ds, c, out_path(c, "summary.json"));
  if (inr && !log.diverged) write_reconstructions(log, arch, c, ds, width, height);
  if (c.save_checkpoints && !log.diverged)
    for (std::size_t j = 0; j < cohort.size(); ++j)
      save_checkpoint(cohort[j], out_path(c, "model_net" + std::to_string(j + 1) + ".ckpt"));

  if (log.diverged)
    throw DivergenceError("training diverged at step " + std::to_string(log.diverged_step) +
                          " (network " + std::to_string(log.diverged_model + 1) +
                          "); partial artifacts written to " + c.out_dir);
  logf(LogLevel::info,
       "run: done, " + std::to_string(log.series.size()) + " evals, tau_0=" +
           (log.stop.triggered ? std::to_string(log.stop.tau_0) : std::string("none")));
  return 0;
}

int cmd_sweep(const ExperimentConfig& c) {
  if (c.task != "dq_sweep")
    throw ConfigError("sweep: config task must be 'dq_sweep', got '" + c.task + "'");
  Dataset base = build_dataset(c);
  const ArchSpec arch = resolve_arch(c, static_cast<int>(base.xs.cols()), base.num_classes);

  TrainConfig tc = c.train;
  if (!c.loss_given) tc.loss = LossKind::softmax_cross_entropy;
  if (tc.eval_every_steps < 0) tc.eval_every_steps = 0;
  tc.rule = StopRule{c.stop.alpha, c.stop.w, c.stop.burn_in};

  SweepConfig sc;
  sc.pairs_per_rate = c.sweep.pairs_per_rate;
  sc.prominence = c.sweep.prominence;
  sc.include_clean_in_fit = c.sweep.include_clean;
  sc.threads = std::max(1, c.train.threads);
  sc.seed = c.sweep.sweep_seed;

  logf(LogLevel::info, "sweep: " + std::to_string(c.sweep.rates.size()) + " rates x " +
                           std::to_string(sc.pairs_per_rate) + " pairs, threads=" +
                           std::to_string(sc.threads));
  SweepResult res = run_sweep(base, c.sweep.rates, arch, tc, sc);

  write_sweep_csv(res, out_path(c, "sweep.csv"));

  ojson out;
  out["schema_version"] = 1;
  out["task"] = c.task;
  out["arch"] = res.task;
  ojson pts = ojson::array();
  for (const SweepPoint& p : res.points) {
    ojson e;
    e["rate"] = p.rate;
    e["e_realized"] = p.e_realized;
    e["d_star"] = json_or_null(p.usable, p.d_star);
    e["tau_0"] = json_or_null_step(p.tau_0);
    e["pairs_used"] = p.pairs_used;
    e["usable"] = p.usable;
    pts.push_back(e);
  }
  out["points"] = pts;
  ojson raws = ojson::array();
  for (const SweepPointRaw& r : res.raw) {
    ojson e;
    e["rate"] = r.rate;
    e["e_realized"] = r.e_realized;
    ojson pairs = ojson::array();
    for (const SweepPairOutcome& p : r.pairs) {
      ojson q;
      q["seed1"] = p.seed1;
      q["seed2"] = p.seed2;
      q["diverged"] = p.diverged;
      q["has_peak"] = p.has_peak;
      q["d_star"] = json_or_null(std::isfinite(p.d_star), p.d_star);
      q["terminal"] = json_or_null(std::isfinite(p.terminal), p.terminal);
      q["tau_0"] = json_or_null_step(p.tau_0);
      pairs.push_back(q);
    }
    e["pairs"] = pairs;
    raws.push_back(e);
  }
  out["raw"] = raws;
  out["fit_valid"] = res.fit_valid;
  if (res.fit_valid) {
    ojson f;
    f["slope"] = res.fit.slope;
    f["intercept"] = res.fit.intercept;
    f["r_squared"] = res.fit.r_squared;
    f["rse"] = res.fit.rse;
    f["n"] = res.fit.n;
    out["fit"] = f;
  } else {
    out["fit"] = nullptr;
  }
  write_text(out_path(c, "sweep.json"), out.dump(2) + "\n");

  if (res.fit_valid)
    std::printf("fit: D* = %.6g * E + %.6g (R^2 = %.6g, n = %d)\n", res.fit.slope,
                res.fit.intercept, res.fit.r_squared, res.fit.n);
  else
    std::printf("fit: not enough usable points\n");
  return 0;
}

int cmd_estimate(const std::string& fit_path, double d_star, const std::string& out_dir) {
  std::ifstream in(fit_path);
  if (!in) throw IoError("estimate: cannot open '" + fit_path + "'");
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("estimate: '" + fit_path + "' is not valid JSON: " + e.what());
  }
  const nlohmann::json* f = &root;
  if (root.is_object() && root.contains("fit")) {
    if (root["fit"].is_null())
      throw ConfigError("estimate: fit uninformative (sweep produced no valid fit)");
    f = &root["fit"];
  }
  if (!f->is_object() || !f->contains("slope") || !f->contains("intercept"))
    throw ConfigError("estimate: fit file needs numeric 'slope' and 'intercept' fields");
  LineFit fit;
  fit.slope = (*f)["slope"].get<double>();
  fit.intercept = (*f)["intercept"].get<double>();
  fit.rse = f->value("rse", 0.0);
  fit.n = f->value("n", 0);

  const NoiseEstimate est = estimate_noise(fit, d_star, true);

  ojson out;
  out["schema_version"] = 1;
  out["d_star_observed"] = est.d_star_observed;
  out["e_hat"] = est.e_hat;
  out["ci_halfwidth"] = est.ci_halfwidth;
  fs::path dir(out_dir.empty() ? "." : out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_text((dir / "estimate.json").string(), out.dump(2) + "\n");

  std::printf("e_hat: %.6g (ci +/- %.6g)\n", est.e_hat, est.ci_halfwidth);
  return 0;
}

int cmd_verify_linear(const ExperimentConfig& c) {
  if (c.task != "linear_oracle")
    throw ConfigError("verify-linear: config task must be 'linear_oracle', got '" + c.task + "'");
  const LinearSection& L = c.linear;
  if (L.instances < 1 || L.p_max < 1 || L.n_max < 2)
    throw ConfigError("verify-linear: instances/p_max/n_max out of range");

  int passes = 0;
  double worst = 0.0;
  for (int i = 0; i < L.instances; ++i) {
    Rng r(Rng::derive(L.seed, static_cast<std::uint64_t>(i)));
    FeatureBasis b;
    b.kind = FeatureBasis::Kind::random_fourier;
    b.P = 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(L.p_max)));
    b.input_dim = 1;
    b.seed = r.next_u64();
    b.bandwidth = 0.5 + 2.0 * r.uniform();
    const int N = 2 + static_cast<int>(r.below(static_cast<std::uint64_t>(L.n_max - 1)));
    Mat X(N, 1);
    for (int k = 0; k < N; ++k) X(k, 0) = r.uniform(-3.0, 3.0);
    Vec y(N);
    const double sig = 2.0 * r.uniform();  // arbitrary noise; the flow ignores it
    for (int k = 0; k < N; ++k) y(k) = std::sin(1.5 * X(k, 0)) + sig * r.normal();

    const LinearFlowState st = make_linear_flow(b, X, y, r.next_u64(), r.next_u64());
    const FlowTrajectory tr = integrate_flow(st, L.t_end, FlowMode::closed_form, L.samples);
    const MonotoneVerdict v = verify_monotone(tr);
    if (v.monotone) ++passes;
    else worst = std::max(worst, v.max_violation);
    if (i == 0) write_trajectory_csv(tr, out_path(c, "linear_trajectory.csv"));
  }

  std::printf("monotone: %d/%d\n", passes, L.instances);
  if (passes != L.instances) {
    std::printf("max violation: %.6g\n", worst);
    return 1;
  }
  return 0;
}

int cmd_check_theorem(const ExperimentConfig& c) {
  if (c.task != "theorem_check")
    throw ConfigError("check-theorem: config task must be 'theorem_check', got '" + c.task + "'");
  Dataset ds = build_dataset(c);
  const ArchSpec arch = resolve_arch(c, 1, 1);
  TheoremRunConfig trc;
  trc.lr = c.theorem.lr;
  trc.steps = c.theorem.steps;
  trc.eval_every = c.theorem.eval_every;
  trc.stop_w = c.theorem.stop_w;
  trc.probe_every_evals = c.theorem.probe_every_evals;
  trc.burst_halfwidth = c.theorem.burst_halfwidth;
  trc.min_probes = c.theorem.min_probes;
  trc.fd_lr = c.theorem.fd_lr;
  trc.budget_mb = c.theorem.budget_mb;

  logf(LogLevel::info, "theorem check: " + arch.to_string() + ", N=" + std::to_string(ds.n()) +
                           ", steps=" + std::to_string(trc.steps));
  const TheoremRunResult r =
      run_theorem_check(ds, arch, c.seeds.at(0), c.seeds.at(1), trc);

  ojson out;
  out["schema_version"] = 1;
  out["task"] = c.task;
  out["tau_0"] = r.stop.triggered ? ojson(r.stop.tau_0) : ojson(nullptr);
  out["alpha_flow"] = r.alpha_flow;
  out["alpha_step"] = r.alpha_step;
  out["tau_alpha_step"] = json_or_null_step(r.tau_alpha_step);
  ojson probes = ojson::array();
  for (const KernelReport& k : r.reports) {
    ojson e;
    e["t"] = k.t;
    e["flow_time"] = k.flow_time;
    e["a1"] = k.a1;
    e["a2"] = k.a2;
    e["b1"] = k.b1;
    e["b2"] = k.b2;
    e["d1"] = k.d1;
    e["d2"] = k.d2;
    e["delta_min"] = k.delta_min;
    e["eps_min"] = k.eps_min;
    e["lhs"] = k.lhs;
    e["identity_gap"] = k.identity_gap;
    e["dDdt_flow"] = 4.0 * k.lhs;
    e["result1_pass"] = k.result1_pass;
    e["result2_pass"] = k.result2_pass;
    probes.push_back(e);
  }
  out["probes"] = probes;
  ojson fds = ojson::array();
  for (const FdCheck& f : r.fd_checks) {
    ojson e;
    e["step"] = f.step;
    e["analytic"] = f.analytic;
    e["fd"] = f.fd;
    e["rel_err"] = f.rel_err;
    e["resolvable"] = f.resolvable;
    fds.push_back(e);
  }
  out["fd_checks"] = fds;
  write_text(out_path(c, "theorem.json"), out.dump(2) + "\n");

  {
    CsvWriter csv(out_path(c, "theorem_series.csv"));
    csv.header({"step", "D_t"});
    for (std::size_t k = 0; k < r.series.size(); ++k) {
      csv.begin_row();
      csv.field(r.series.steps[k]);
      csv.field(r.series.values[k]);
      csv.end_row();
    }
  }

  int p1 = 0, p2 = 0;
  for (const KernelReport& k : r.reports) {
    p1 += k.result1_pass ? 1 : 0;
    p2 += k.result2_pass ? 1 : 0;
  }
  const int n = static_cast<int>(r.reports.size());
  std::printf("theorem: result1 %d/%d, result2 %d/%d\n", p1, n, p2, n);
  std::printf("alpha suggestion: %.6g (flow) = %.6g per step\n", r.alpha_flow, r.alpha_step);
  return 0;
}

}  // namespace d3
