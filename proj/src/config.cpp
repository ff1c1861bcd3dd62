#include "d3/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace d3 {

namespace {

using njson = nlohmann::json;

std::string join_path(const std::string& base, const char* key) {
  return base.empty() ? std::string(key) : base + "." + key;
}

void check_keys(const njson& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  std::set<std::string> ok;
  for (const char* k : allowed) ok.insert(k);
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key()))
      throw ConfigError("config: unknown field '" + join_path(path, it.key().c_str()) + "'");
}

const njson* find(const njson& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

template <typename T>
const char* type_name();
template <>
const char* type_name<double>() { return "a number"; }
template <>
const char* type_name<long>() { return "an integer"; }
template <>
const char* type_name<int>() { return "an integer"; }
template <>
const char* type_name<std::uint64_t>() { return "a non-negative integer"; }
template <>
const char* type_name<bool>() { return "a boolean"; }
template <>
const char* type_name<std::string>() { return "a string"; }

template <typename T>
T convert(const njson& v, const std::string& fpath) {
  const bool ok = [&] {
    if constexpr (std::is_same_v<T, double>) return v.is_number();
    else if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
    else if constexpr (std::is_same_v<T, std::string>) return v.is_string();
    else if constexpr (std::is_same_v<T, std::uint64_t>) return v.is_number_unsigned();
    else return v.is_number_integer();
  }();
  if (!ok)
    throw ConfigError("config: field '" + fpath + "' must be " + type_name<T>());
  return v.get<T>();
}

template <typename T>
T req(const njson& obj, const char* key, const std::string& path) {
  const njson* v = find(obj, key);
  if (!v) throw ConfigError("config: missing required field '" + join_path(path, key) + "'");
  return convert<T>(*v, join_path(path, key));
}

template <typename T>
T opt(const njson& obj, const char* key, const std::string& path, T def) {
  const njson* v = find(obj, key);
  return v ? convert<T>(*v, join_path(path, key)) : def;
}

std::vector<double> req_number_array(const njson& obj, const char* key, const std::string& path) {
  const njson* v = find(obj, key);
  const std::string fpath = join_path(path, key);
  if (!v) throw ConfigError("config: missing required field '" + fpath + "'");
  if (!v->is_array()) throw ConfigError("config: field '" + fpath + "' must be an array");
  std::vector<double> out;
  for (const njson& e : *v) {
    if (!e.is_number()) throw ConfigError("config: field '" + fpath + "' must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

void parse_dataset(const njson& obj, DatasetConfig& d) {
  check_keys(obj, "dataset",
             {"n", "lo", "hi", "sigma", "data_seed", "k", "input_dim", "spread",
              "corruption_rate", "corruption_seed", "image", "width", "height"});
  d.n = opt<int>(obj, "n", "dataset", d.n);
  d.lo = opt<double>(obj, "lo", "dataset", d.lo);
  d.hi = opt<double>(obj, "hi", "dataset", d.hi);
  d.sigma = opt<double>(obj, "sigma", "dataset", d.sigma);
  d.data_seed = opt<std::uint64_t>(obj, "data_seed", "dataset", d.data_seed);
  d.k = opt<int>(obj, "k", "dataset", d.k);
  d.input_dim = opt<int>(obj, "input_dim", "dataset", d.input_dim);
  d.spread = opt<double>(obj, "spread", "dataset", d.spread);
  d.corruption_rate = opt<double>(obj, "corruption_rate", "dataset", d.corruption_rate);
  d.corruption_seed = opt<std::uint64_t>(obj, "corruption_seed", "dataset", d.corruption_seed);
  d.image = opt<std::string>(obj, "image", "dataset", d.image);
  d.width = opt<int>(obj, "width", "dataset", d.width);
  d.height = opt<int>(obj, "height", "dataset", d.height);
}

FeatureBasis parse_basis(const njson& obj, const std::string& path) {
  check_keys(obj, path, {"kind", "p", "input_dim", "seed", "bandwidth"});
  FeatureBasis b;
  const std::string kind = opt<std::string>(obj, "kind", path, "polynomial");
  if (kind == "polynomial") b.kind = FeatureBasis::Kind::polynomial;
  else if (kind == "random_fourier") b.kind = FeatureBasis::Kind::random_fourier;
  else
    throw ConfigError("config: field '" + path +
                      ".kind' must be 'polynomial' or 'random_fourier'");
  b.P = opt<int>(obj, "p", path, b.P);
  b.input_dim = opt<int>(obj, "input_dim", path, b.input_dim);
  b.seed = opt<std::uint64_t>(obj, "seed", path, b.seed);
  b.bandwidth = opt<double>(obj, "bandwidth", path, b.bandwidth);
  return b;
}

void parse_arch(const njson& obj, ArchSpec& a) {
  check_keys(obj, "arch", {"kind", "hidden", "sine_omega0", "basis"});
  const std::string kind = req<std::string>(obj, "kind", "arch");
  if (kind == "mlp_relu") a.kind = ArchKind::mlp_relu;
  else if (kind == "mlp_sine") a.kind = ArchKind::mlp_sine;
  else if (kind == "linear_features") a.kind = ArchKind::linear_features;
  else
    throw ConfigError(
        "config: field 'arch.kind' must be 'mlp_relu', 'mlp_sine' or 'linear_features'");
  if (const njson* h = find(obj, "hidden")) {
    if (!h->is_array()) throw ConfigError("config: field 'arch.hidden' must be an array");
    a.hidden.clear();
    for (const njson& e : *h) {
      if (!e.is_number_integer())
        throw ConfigError("config: field 'arch.hidden' must hold integers");
      a.hidden.push_back(e.get<int>());
    }
  }
  a.sine_omega0 = opt<double>(obj, "sine_omega0", "arch", a.sine_omega0);
  if (const njson* b = find(obj, "basis")) a.basis = parse_basis(*b, "arch.basis");
}

void parse_optimizer(const njson& obj, nn::OptimizerConfig& o) {
  check_keys(obj, "train.optimizer",
             {"kind", "lr", "momentum", "weight_decay", "beta1", "beta2", "eps"});
  const std::string kind = opt<std::string>(obj, "kind", "train.optimizer", "sgd_momentum");
  if (kind == "sgd_momentum") o.kind = nn::OptimizerConfig::Kind::sgd_momentum;
  else if (kind == "adam") o.kind = nn::OptimizerConfig::Kind::adam;
  else
    throw ConfigError("config: field 'train.optimizer.kind' must be 'sgd_momentum' or 'adam'");
  o.lr = opt<double>(obj, "lr", "train.optimizer", o.lr);
  o.momentum = opt<double>(obj, "momentum", "train.optimizer", o.momentum);
  o.weight_decay = opt<double>(obj, "weight_decay", "train.optimizer", o.weight_decay);
  o.beta1 = opt<double>(obj, "beta1", "train.optimizer", o.beta1);
  o.beta2 = opt<double>(obj, "beta2", "train.optimizer", o.beta2);
  o.eps = opt<double>(obj, "eps", "train.optimizer", o.eps);
}

void parse_train(const njson& obj, TrainConfig& t, bool epochs_required, bool& loss_given) {
  check_keys(obj, "train",
             {"epochs", "batch_size", "shuffle_seed", "optimizer", "loss", "eval_every_steps",
              "snapshot_eval", "threads"});
  if (epochs_required) t.epochs = req<long>(obj, "epochs", "train");
  else t.epochs = opt<long>(obj, "epochs", "train", t.epochs);
  t.batch_size = opt<int>(obj, "batch_size", "train", t.batch_size);
  t.shuffle_seed = opt<std::uint64_t>(obj, "shuffle_seed", "train", t.shuffle_seed);
  if (const njson* o = find(obj, "optimizer")) parse_optimizer(*o, t.opt);
  if (const njson* l = find(obj, "loss")) {
    const std::string loss = convert<std::string>(*l, "train.loss");
    if (loss == "mse") t.loss = LossKind::mse;
    else if (loss == "softmax_cross_entropy") t.loss = LossKind::softmax_cross_entropy;
    else
      throw ConfigError("config: field 'train.loss' must be 'mse' or 'softmax_cross_entropy'");
    loss_given = true;
  }
  // -1 = "not set": the runner fills the task default (per epoch, or a step
  // stride for image fitting).
  t.eval_every_steps = opt<long>(obj, "eval_every_steps", "train", -1);
  t.snapshot_eval = opt<bool>(obj, "snapshot_eval", "train", t.snapshot_eval);
  t.threads = opt<int>(obj, "threads", "train", t.threads);
}

void parse_stop(const njson& obj, StopConfig& s) {
  check_keys(obj, "stop", {"alpha", "w", "burn_in", "enforce"});
  s.alpha = opt<double>(obj, "alpha", "stop", s.alpha);
  s.w = opt<int>(obj, "w", "stop", s.w);
  s.burn_in = opt<int>(obj, "burn_in", "stop", s.burn_in);
  s.enforce = opt<bool>(obj, "enforce", "stop", s.enforce);
}

void parse_sweep(const njson& obj, SweepSection& s) {
  check_keys(obj, "sweep",
             {"rates", "pairs_per_rate", "sweep_seed", "prominence", "include_clean"});
  s.rates = req_number_array(obj, "rates", "sweep");
  s.pairs_per_rate = opt<int>(obj, "pairs_per_rate", "sweep", s.pairs_per_rate);
  s.sweep_seed = opt<std::uint64_t>(obj, "sweep_seed", "sweep", s.sweep_seed);
  s.prominence = opt<double>(obj, "prominence", "sweep", s.prominence);
  s.include_clean = opt<bool>(obj, "include_clean", "sweep", s.include_clean);
}

void parse_linear(const njson& obj, LinearSection& l) {
  check_keys(obj, "linear", {"instances", "p_max", "n_max", "t_end", "samples", "seed"});
  l.instances = opt<int>(obj, "instances", "linear", l.instances);
  l.p_max = opt<int>(obj, "p_max", "linear", l.p_max);
  l.n_max = opt<int>(obj, "n_max", "linear", l.n_max);
  l.t_end = opt<double>(obj, "t_end", "linear", l.t_end);
  l.samples = opt<int>(obj, "samples", "linear", l.samples);
  l.seed = opt<std::uint64_t>(obj, "seed", "linear", l.seed);
}

void parse_theorem(const njson& obj, TheoremSection& t) {
  check_keys(obj, "theorem",
             {"lr", "steps", "eval_every", "stop_w", "probe_every_evals", "burst_halfwidth",
              "min_probes", "fd_lr", "budget_mb"});
  t.lr = opt<double>(obj, "lr", "theorem", t.lr);
  t.steps = opt<long>(obj, "steps", "theorem", t.steps);
  t.eval_every = opt<long>(obj, "eval_every", "theorem", t.eval_every);
  t.stop_w = opt<int>(obj, "stop_w", "theorem", t.stop_w);
  t.probe_every_evals = opt<long>(obj, "probe_every_evals", "theorem", t.probe_every_evals);
  t.burst_halfwidth = opt<int>(obj, "burst_halfwidth", "theorem", t.burst_halfwidth);
  t.min_probes = opt<int>(obj, "min_probes", "theorem", t.min_probes);
  t.fd_lr = opt<double>(obj, "fd_lr", "theorem", t.fd_lr);
  t.budget_mb = opt<double>(obj, "budget_mb", "theorem", t.budget_mb);
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  njson root;
  try {
    root = njson::parse(in);
  } catch (const njson::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be a JSON object");
  check_keys(root, "",
             {"task", "seeds", "out_dir", "dataset", "arch", "train", "stop", "sweep", "linear",
              "theorem", "save_checkpoints"});

  ExperimentConfig c;
  c.task = req<std::string>(root, "task", "");
  static const std::set<std::string> kTasks = {"toy_regression", "blobs_classification",
                                               "inr_denoise",    "linear_oracle",
                                               "theorem_check",  "dq_sweep"};
  if (!kTasks.count(c.task))
    throw ConfigError("config: field 'task' must be one of toy_regression, "
                      "blobs_classification, inr_denoise, linear_oracle, theorem_check, dq_sweep");

  if (const njson* s = find(root, "seeds")) {
    if (!s->is_array()) throw ConfigError("config: field 'seeds' must be an array");
    c.seeds.clear();
    for (const njson& e : *s) {
      if (!e.is_number_unsigned())
        throw ConfigError("config: field 'seeds' must hold non-negative integers");
      c.seeds.push_back(e.get<std::uint64_t>());
    }
    if (c.seeds.size() < 2) throw ConfigError("config: field 'seeds' needs at least 2 entries");
  }
  c.out_dir = opt<std::string>(root, "out_dir", "", c.out_dir);
  c.save_checkpoints = opt<bool>(root, "save_checkpoints", "", c.save_checkpoints);

  if (const njson* d = find(root, "dataset")) parse_dataset(*d, c.dataset);
  if (const njson* a = find(root, "arch")) {
    parse_arch(*a, c.arch);
    c.arch_given = true;
  }

  const bool trains = c.task == "toy_regression" || c.task == "blobs_classification" ||
                      c.task == "inr_denoise" || c.task == "dq_sweep";
  if (const njson* t = find(root, "train")) {
    parse_train(*t, c.train, trains, c.loss_given);
  } else if (trains) {
    throw ConfigError("config: missing required field 'train.epochs'");
  }

  if (const njson* s = find(root, "stop")) parse_stop(*s, c.stop);
  if (const njson* s = find(root, "sweep")) parse_sweep(*s, c.sweep);
  else if (c.task == "dq_sweep")
    throw ConfigError("config: missing required field 'sweep.rates'");
  if (const njson* l = find(root, "linear")) parse_linear(*l, c.linear);
  if (const njson* t = find(root, "theorem")) parse_theorem(*t, c.theorem);

  // Cheap semantic checks before any compute.
  if (c.task == "dq_sweep") {
    if (c.sweep.rates.empty()) throw ConfigError("config: field 'sweep.rates' must be non-empty");
    for (double r : c.sweep.rates)
      if (r < 0.0 || r > 1.0)
        throw ConfigError("config: field 'sweep.rates' entries must lie in [0,1]");
  }
  if (trains && c.train.epochs < 1)
    throw ConfigError("config: field 'train.epochs' must be >= 1");
  if (c.stop.w < 1) throw ConfigError("config: field 'stop.w' must be >= 1");
  if (c.dataset.n < 1) throw ConfigError("config: field 'dataset.n' must be >= 1");
  return c;
}

Dataset build_dataset(const ExperimentConfig& c) {
  const DatasetConfig& d = c.dataset;
  if (c.task == "toy_regression" || c.task == "theorem_check")
    return gen_sigmoid_regression(d.n, d.lo, d.hi, d.sigma, d.data_seed);
  if (c.task == "blobs_classification" || c.task == "dq_sweep") {
    Dataset base = gen_blob_classification(d.n, d.k, d.input_dim, d.spread, d.data_seed);
    if (c.task == "blobs_classification" && d.corruption_rate > 0.0)
      return corrupt_labels(base, d.corruption_rate, d.corruption_seed);
    return base;
  }
  if (c.task == "inr_denoise") {
    ImageGray img;
    if (d.image.size() > 4 && d.image.substr(d.image.size() - 4) == ".pgm")
      img = load_pgm(d.image);
    else
      img = make_image(d.image, d.width, d.height);
    return gen_inr_dataset(img, d.sigma, d.data_seed);
  }
  throw ConfigError("config: task '" + c.task + "' does not define a dataset");
}

ArchSpec resolve_arch(const ExperimentConfig& c, int input_dim, int output_dim) {
  ArchSpec a;
  if (c.arch_given) {
    a = c.arch;
  } else if (c.task == "toy_regression") {
    a.kind = ArchKind::mlp_relu;
    a.hidden = {512, 512, 512, 512};
  } else if (c.task == "blobs_classification" || c.task == "dq_sweep") {
    a.kind = ArchKind::mlp_relu;
    a.hidden = {64, 64};
  } else if (c.task == "inr_denoise") {
    a.kind = ArchKind::mlp_sine;
    a.hidden = {64, 64, 64};
  } else if (c.task == "theorem_check") {
    a.kind = ArchKind::mlp_relu;
    a.hidden = {32, 32};
  } else {
    throw ConfigError("config: task '" + c.task + "' does not use a network architecture");
  }
  a.input_dim = input_dim;
  a.output_dim = output_dim;
  if (a.kind == ArchKind::linear_features) {
    a.basis.input_dim = input_dim;
    a.hidden.clear();
  }
  a.validate();
  return a;
}

}  // namespace d3
