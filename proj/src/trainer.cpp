#include "d3/trainer.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "d3/csv.hpp"
#include "d3/rng.hpp"

namespace d3 {

MetricKind task_metric(Task t) {
  return t == Task::classification ? MetricKind::class_disagreement : MetricKind::sq_l2;
}

double oracle_error(const ModelState& m, const Dataset& ds) {
  if (!ds.has_clean()) throw ConfigError("oracle_error: dataset has no clean targets");
  if (ds.task == Task::classification) {
    return d_n_labels(predict_classes(m, ds.xs), ds.labels_clean());
  }
  return d_n(forward(m, ds.xs), ds.ys_clean, MetricKind::sq_l2);
}

long optimal_stop(const RunLog& log, int j) {
  if (!log.has_oracle) throw ConfigError("optimal_stop: no oracle column in this log");
  long best_step = -1;
  double best = std::numeric_limits<double>::infinity();
  for (const EvalRow& r : log.rows) {
    const double v = r.oracle[static_cast<std::size_t>(j)];
    if (v < best) {
      best = v;
      best_step = r.step;
    }
  }
  return best_step;
}

double psnr_gap(const RunLog& log, int j, long tau) {
  if (!log.has_psnr) throw ConfigError("psnr_gap: no psnr column in this log");
  double best = -std::numeric_limits<double>::infinity();
  double at_tau = std::numeric_limits<double>::quiet_NaN();
  bool found = false;
  for (const EvalRow& r : log.rows) {
    const double v = r.psnr[static_cast<std::size_t>(j)];
    if (v > best) best = v;
    if (r.step == tau) {
      at_tau = v;
      found = true;
    }
  }
  if (!found) throw ConfigError("psnr_gap: tau is not a logged step");
  return best - at_tau;
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) {
    h ^= (v >> (8 * b)) & 0xffull;
    h *= kFnvPrime;
  }
}

struct MemberCtx {
  ModelState* model;
  nn::Optimizer opt;
  nn::ParamVector grad;
  nn::Tape tape;
  double batch_loss = 0.0;  // loss of the latest batch
  Mat batch_out;            // outputs of the latest batch (pre-update forward)
  std::uint64_t idx_hash = kFnvOffset;
  std::exception_ptr error;
};

// One optimization step of one member; runs on the member's own thread when
// the cohort is parallel.
void member_step(MemberCtx& ctx, const Mat& X, const Mat& Y, const std::vector<int>& labels,
                 LossKind loss, const std::vector<std::size_t>& batch_idx) {
  try {
    ctx.tape.clear();
    ForwardGraph g = stage_forward(ctx.tape, *ctx.model, X);
    int loss_node = loss == LossKind::mse ? ctx.tape.mse(g.out, Y)
                                          : ctx.tape.softmax_xent(g.out, labels);
    ctx.batch_loss = ctx.tape.scalar(loss_node);
    ctx.batch_out = ctx.tape.value(g.out);
    ctx.tape.backward(loss_node, g.params, ctx.grad);
    ctx.opt.step(ctx.model->theta.data, ctx.grad.data);
    for (std::size_t i : batch_idx) fnv_mix(ctx.idx_hash, static_cast<std::uint64_t>(i));
  } catch (...) {
    ctx.error = std::current_exception();
  }
}

double pair_metric(const Mat& a, const Mat& b, MetricKind metric) {
  if (metric == MetricKind::class_disagreement)
    return d_n_labels(argmax_rows(a), argmax_rows(b));
  return d_n(a, b, metric);
}

}  // namespace

RunLog train_cohort(std::vector<ModelState>& cohort, const Dataset& ds, const TrainConfig& cfg) {
  const auto t_begin = std::chrono::steady_clock::now();
  const int J = static_cast<int>(cohort.size());
  if (J < 2) throw ConfigError("train_cohort: need at least two members");
  for (const ModelState& m : cohort)
    if (m.arch.to_string() != cohort[0].arch.to_string())
      throw ConfigError("train_cohort: cohort is not architecture-homogeneous");
  ds.validate();
  if (cfg.loss == LossKind::softmax_cross_entropy && ds.task != Task::classification)
    throw ConfigError("train_cohort: cross-entropy needs a classification dataset");
  if (cfg.loss == LossKind::mse && ds.task == Task::classification)
    throw ConfigError("train_cohort: classification dataset needs the cross-entropy loss");
  if (cfg.epochs < 1) throw ConfigError("train_cohort: epochs must be >= 1");
  const Eigen::Index N = ds.n();
  const int B = cfg.batch_size == 0 ? static_cast<int>(N) : cfg.batch_size;
  if (B < 1 || B > N) throw ConfigError("train_cohort: batch_size must be in [1, N]");

  const MetricKind metric = task_metric(ds.task);

  RunLog log;
  log.J = J;
  log.rule_w = cfg.rule.w;
  log.has_oracle = cfg.track_oracle && ds.has_clean();
  log.has_psnr = cfg.track_psnr && ds.task == Task::inr && ds.has_clean();

  std::vector<MemberCtx> ctx;
  ctx.reserve(static_cast<std::size_t>(J));
  for (ModelState& m : cohort) {
    MemberCtx c{&m, nn::Optimizer(cfg.opt, m.theta.size()), m.theta, nn::Tape()};
    c.grad.data.setZero();
    ctx.push_back(std::move(c));
  }

  Rng shuffle_rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(N));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const int n_pairs = J * (J - 1) / 2;
  double agg_d_pair = 0.0, agg_d_all = 0.0;
  std::vector<double> agg_loss(static_cast<std::size_t>(J), 0.0);
  long agg_samples = 0;

  long step = 0;
  bool halted = false;

  auto snapshot_outputs = [&](int j) { return forward(cohort[static_cast<std::size_t>(j)], ds.xs); };

  auto emit_eval = [&]() {
    EvalRow row;
    row.step = step;
    if (cfg.snapshot_eval) {
      std::vector<Mat> outs(static_cast<std::size_t>(J));
      for (int j = 0; j < J; ++j) outs[static_cast<std::size_t>(j)] = snapshot_outputs(j);
      row.d = pair_metric(outs[0], outs[1], metric);
      double acc = 0.0;
      for (int a = 0; a < J; ++a)
        for (int b = a + 1; b < J; ++b)
          acc += pair_metric(outs[static_cast<std::size_t>(a)], outs[static_cast<std::size_t>(b)],
                             metric);
      row.d_mean_pairs = acc / n_pairs;
      for (int j = 0; j < J; ++j) {
        nn::Tape t;
        ForwardGraph g = stage_forward(t, cohort[static_cast<std::size_t>(j)], ds.xs);
        int ln = cfg.loss == LossKind::mse ? t.mse(g.out, ds.ys_noisy)
                                           : t.softmax_xent(g.out, ds.labels_noisy());
        row.loss.push_back(t.scalar(ln));
      }
    } else {
      row.d = agg_d_pair / static_cast<double>(agg_samples);
      row.d_mean_pairs = agg_d_all / (static_cast<double>(agg_samples) * n_pairs);
      for (int j = 0; j < J; ++j)
        row.loss.push_back(agg_loss[static_cast<std::size_t>(j)] / static_cast<double>(agg_samples));
    }
    agg_d_pair = agg_d_all = 0.0;
    agg_loss.assign(static_cast<std::size_t>(J), 0.0);
    agg_samples = 0;

    if (log.has_oracle || log.has_psnr) {
      for (int j = 0; j < J; ++j) {
        if (ds.task == Task::classification) {
          row.oracle.push_back(
              d_n_labels(predict_classes(cohort[static_cast<std::size_t>(j)], ds.xs),
                         ds.labels_clean()));
        } else {
          const Mat out = snapshot_outputs(j);
          row.oracle.push_back(d_n(out, ds.ys_clean, MetricKind::sq_l2));
          if (log.has_psnr) {
            const Vec clipped = out.col(0).cwiseMax(0.0).cwiseMin(1.0);
            row.psnr.push_back(psnr_signal(clipped, ds.ys_clean.col(0)));
          }
        }
      }
    }

    log.series.append(step, row.d, row.d_mean_pairs);
    log.rows.push_back(std::move(row));

    if (cfg.snapshot_params) {
      std::vector<Vec> thetas;
      thetas.reserve(static_cast<std::size_t>(J));
      for (int j = 0; j < J; ++j) thetas.push_back(cohort[static_cast<std::size_t>(j)].theta.data);
      log.theta_snapshots.push_back(std::move(thetas));
    }

    if (cfg.enforce_stop && log.series.size() >= static_cast<std::size_t>(cfg.rule.w) + 1) {
      StopReport rep = stopping_time(log.series, cfg.rule.alpha, cfg.rule.w, cfg.rule.burn_in);
      if (rep.alpha_triggered) {
        log.early_stopped = true;
        log.stopped_at_step = step;
        halted = true;
      }
    }
  };

  for (long epoch = 0; epoch < cfg.epochs && !halted && !log.diverged; ++epoch) {
    shuffle_rng.shuffle(order);
    for (Eigen::Index start = 0; start < N && !halted; start += B) {
      const Eigen::Index nb = std::min<Eigen::Index>(B, N - start);
      std::vector<std::size_t> batch_idx(order.begin() + start, order.begin() + start + nb);
      Mat X(nb, ds.xs.cols());
      Mat Y(nb, ds.ys_noisy.cols());
      std::vector<int> labels;
      for (Eigen::Index r = 0; r < nb; ++r) {
        X.row(r) = ds.xs.row(static_cast<Eigen::Index>(batch_idx[static_cast<std::size_t>(r)]));
        Y.row(r) =
            ds.ys_noisy.row(static_cast<Eigen::Index>(batch_idx[static_cast<std::size_t>(r)]));
      }
      if (cfg.loss == LossKind::softmax_cross_entropy) {
        labels.resize(static_cast<std::size_t>(nb));
        for (Eigen::Index r = 0; r < nb; ++r)
          labels[static_cast<std::size_t>(r)] = static_cast<int>(Y(r, 0));
      }

      if (cfg.threads > 1) {
        std::vector<std::thread> workers;
        workers.reserve(static_cast<std::size_t>(J));
        for (int j = 0; j < J; ++j)
          workers.emplace_back(member_step, std::ref(ctx[static_cast<std::size_t>(j)]),
                               std::cref(X), std::cref(Y), std::cref(labels), cfg.loss,
                               std::cref(batch_idx));
        for (auto& w : workers) w.join();
      } else {
        for (int j = 0; j < J; ++j)
          member_step(ctx[static_cast<std::size_t>(j)], X, Y, labels, cfg.loss, batch_idx);
      }
      ++step;

      // fixed-order post-step reduction, identical for every thread count
      for (int j = 0; j < J; ++j) {
        MemberCtx& c = ctx[static_cast<std::size_t>(j)];
        bool dead = !std::isfinite(c.batch_loss);
        if (c.error) {
          try {
            std::rethrow_exception(c.error);
          } catch (const DivergenceError&) {
            dead = true;  // setup problems propagate; only numerics divert here
          }
        }
        if (dead) {
          log.diverged = true;
          log.diverged_step = step;
          log.diverged_model = j;
          break;
        }
      }
      if (log.diverged) break;

      agg_d_pair += pair_metric(ctx[0].batch_out, ctx[1].batch_out, metric) * static_cast<double>(nb);
      for (int a = 0; a < J; ++a)
        for (int b = a + 1; b < J; ++b)
          agg_d_all += pair_metric(ctx[static_cast<std::size_t>(a)].batch_out,
                                   ctx[static_cast<std::size_t>(b)].batch_out, metric) *
                       static_cast<double>(nb);
      for (int j = 0; j < J; ++j)
        agg_loss[static_cast<std::size_t>(j)] +=
            ctx[static_cast<std::size_t>(j)].batch_loss * static_cast<double>(nb);
      agg_samples += nb;

      if (cfg.eval_every_steps > 0 && step % cfg.eval_every_steps == 0) emit_eval();
    }
    if (cfg.eval_every_steps == 0 && !halted && !log.diverged && agg_samples > 0) emit_eval();
  }

  log.total_steps = step;
  for (const MemberCtx& c : ctx) log.batch_stream_hash.push_back(c.idx_hash);

  if (log.series.size() >= static_cast<std::size_t>(cfg.rule.w) + 1) {
    log.stop = stopping_time(log.series, cfg.rule.alpha, cfg.rule.w, cfg.rule.burn_in);
  } else {
    log.stop.alpha = cfg.rule.alpha;
  }
  log.wallclock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
  return log;
}

void write_run_csv(const RunLog& log, const std::string& path) {
  CsvWriter csv(path);
  std::vector<std::string> names = {"step", "D_t", "D_smoothed", "dDdt"};
  for (int j = 1; j <= log.J; ++j) names.push_back("loss_" + std::to_string(j));
  if (log.has_oracle)
    for (int j = 1; j <= log.J; ++j) names.push_back("oracle_err_" + std::to_string(j));
  if (log.has_psnr)
    for (int j = 1; j <= log.J; ++j) names.push_back("psnr_" + std::to_string(j));
  if (log.J > 2) names.push_back("D_mean_pairs");
  csv.header(names);

  const std::size_t n = log.rows.size();
  std::vector<double> sm;
  if (n >= static_cast<std::size_t>(log.rule_w)) sm = moving_average(log.series.values, log.rule_w);
  for (std::size_t k = 0; k < n; ++k) {
    const EvalRow& r = log.rows[k];
    csv.begin_row();
    csv.field(r.step);
    csv.field(r.d);
    if (k < sm.size())
      csv.field(sm[k]);
    else
      csv.empty_field();
    if (k + 1 < sm.size())
      csv.field((sm[k + 1] - sm[k]) /
                static_cast<double>(log.rows[k + 1].step - log.rows[k].step));
    else
      csv.empty_field();
    for (double v : r.loss) csv.field(v);
    if (log.has_oracle)
      for (double v : r.oracle) csv.field(v);
    if (log.has_psnr)
      for (double v : r.psnr) csv.field(v);
    if (log.J > 2) csv.field(r.d_mean_pairs);
    csv.end_row();
  }
}

}  // namespace d3
