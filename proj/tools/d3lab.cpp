#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

#include "d3/runner.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  int threads = 0;  // 0 = unset, fall back to D3LAB_THREADS, then config
  std::string log_level;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_config) {
  if (with_config)
    cmd->add_option("--config", f.config, "experiment config JSON")->required();
  cmd->add_option("--out", f.out, "output directory (overrides config out_dir)");
  cmd->add_option("--threads", f.threads, "worker thread cap (results do not depend on it)");
  cmd->add_option("--log-level", f.log_level, "debug|info|warn|error");
}

int resolve_threads(const CommonFlags& f) {
  if (f.threads > 0) return f.threads;
  if (const char* env = std::getenv("D3LAB_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 0;
}

void apply_flags(d3::ExperimentConfig& c, const CommonFlags& f) {
  if (!f.out.empty()) c.out_dir = f.out;
  const int t = resolve_threads(f);
  if (t > 0) c.train.threads = t;
}

void apply_log_level(const CommonFlags& f) {
  if (f.log_level.empty()) return;
  d3::LogLevel lv;
  if (!d3::parse_log_level(f.log_level, lv))
    throw d3::ConfigError("--log-level must be debug, info, warn or error");
  d3::set_log_level(lv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"d3lab: paired-training discrepancy laboratory"};
  app.require_subcommand(1);

  CommonFlags run_f, sweep_f, est_f, lin_f, thm_f;
  double est_d_star = 0.0;
  std::string est_fit;

  CLI::App* run = app.add_subcommand("run", "train a model pair and log its discrepancy");
  add_common(run, run_f, true);
  CLI::App* sweep = app.add_subcommand("sweep", "corruption-rate sweep with peak-vs-noise fit");
  add_common(sweep, sweep_f, true);
  CLI::App* est = app.add_subcommand("estimate", "invert a sweep fit at an observed peak");
  est->add_option("--fit", est_fit, "sweep.json (or any JSON with slope/intercept)")->required();
  est->add_option("--d-star", est_d_star, "observed peak discrepancy")->required();
  add_common(est, est_f, false);
  CLI::App* lin = app.add_subcommand("verify-linear", "monotone-decay check on linear models");
  add_common(lin, lin_f, true);
  CLI::App* thm = app.add_subcommand("check-theorem", "kernel inner-product audit of stopping");
  add_common(thm, thm_f, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      apply_log_level(run_f);
      d3::ExperimentConfig c = d3::load_config(run_f.config);
      apply_flags(c, run_f);
      return d3::cmd_run(c);
    }
    if (sweep->parsed()) {
      apply_log_level(sweep_f);
      d3::ExperimentConfig c = d3::load_config(sweep_f.config);
      apply_flags(c, sweep_f);
      return d3::cmd_sweep(c);
    }
    if (est->parsed()) {
      apply_log_level(est_f);
      return d3::cmd_estimate(est_fit, est_d_star, est_f.out);
    }
    if (lin->parsed()) {
      apply_log_level(lin_f);
      d3::ExperimentConfig c = d3::load_config(lin_f.config);
      apply_flags(c, lin_f);
      return d3::cmd_verify_linear(c);
    }
    if (thm->parsed()) {
      apply_log_level(thm_f);
      d3::ExperimentConfig c = d3::load_config(thm_f.config);
      apply_flags(c, thm_f);
      return d3::cmd_check_theorem(c);
    }
  } catch (const d3::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const d3::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const d3::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
