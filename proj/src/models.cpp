#include "d3/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "d3/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace d3 {

using nlohmann::json;

// ---- FeatureBasis ----------------------------------------------------------

void FeatureBasis::validate() const {
  if (P < 1) throw ConfigError("basis: P must be >= 1");
  if (input_dim < 1) throw ConfigError("basis: input_dim must be >= 1");
  if (kind == Kind::polynomial && input_dim != 1)
    throw ConfigError("basis: polynomial basis requires 1-d inputs");
  if (kind == Kind::random_fourier && bandwidth <= 0.0)
    throw ConfigError("basis: bandwidth must be positive");
}

Mat FeatureBasis::design(const Mat& X) const {
  validate();
  if (X.cols() != input_dim) throw ConfigError("basis: input dimension mismatch");
  const Eigen::Index N = X.rows();
  Mat phi(N, P);
  switch (kind) {
    case Kind::polynomial: {
      for (Eigen::Index i = 0; i < N; ++i) {
        double v = 1.0;
        for (int j = 0; j < P; ++j) {
          phi(i, j) = v;
          v *= X(i, 0);
        }
      }
      break;
    }
    case Kind::random_fourier: {
      Rng rng(seed);
      Mat W(input_dim, P);
      Vec p(P);
      for (int j = 0; j < P; ++j) {
        for (int d = 0; d < input_dim; ++d) W(d, j) = rng.normal(0.0, bandwidth);
        p(j) = rng.uniform(0.0, 6.28318530717958647692);
      }
      phi = ((X * W).rowwise() + p.transpose()).array().cos();
      break;
    }
  }
  return phi;
}

// ---- ArchSpec --------------------------------------------------------------

void ArchSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw ConfigError("arch: dimensions must be >= 1");
  switch (kind) {
    case ArchKind::mlp_relu:
    case ArchKind::mlp_sine:
      if (hidden.empty()) throw ConfigError("arch: hidden widths must be non-empty for MLPs");
      for (int h : hidden)
        if (h < 1) throw ConfigError("arch: hidden width must be >= 1");
      if (kind == ArchKind::mlp_sine && sine_omega0 <= 0.0)
        throw ConfigError("arch: sine_omega0 must be positive");
      break;
    case ArchKind::linear_features:
      basis.validate();
      if (basis.input_dim != input_dim) throw ConfigError("arch: basis input_dim mismatch");
      if (output_dim != 1) throw ConfigError("arch: linear_features is single-output");
      break;
  }
}

std::string ArchSpec::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case ArchKind::mlp_relu: os << "mlp_relu"; break;
    case ArchKind::mlp_sine: os << "mlp_sine(w0=" << sine_omega0 << ")"; break;
    case ArchKind::linear_features:
      os << "linear_features("
         << (basis.kind == FeatureBasis::Kind::polynomial ? "poly" : "rff") << ",P=" << basis.P
         << ",seed=" << basis.seed << ",bw=" << basis.bandwidth << ")";
      break;
  }
  os << ":" << input_dim;
  for (int h : hidden) os << "-" << h;
  os << "-" << output_dim;
  return os.str();
}

// ---- init ------------------------------------------------------------------

namespace {

struct LayerPlan {
  int fan_in, fan_out;
  bool sine;  // activation applied after the affine map
};

std::vector<LayerPlan> plan_layers(const ArchSpec& arch) {
  std::vector<LayerPlan> plan;
  int prev = arch.input_dim;
  for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
    plan.push_back({prev, arch.hidden[l], arch.kind == ArchKind::mlp_sine});
    prev = arch.hidden[l];
  }
  plan.push_back({prev, arch.output_dim, false});
  return plan;
}

void fill_uniform(Eigen::Map<Mat> m, Rng& rng, double lo, double hi) {
  // column-major fill order; part of the checkpoint/determinism contract
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = rng.uniform(lo, hi);
}

}  // namespace

ModelState init_model(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  ModelState m;
  m.arch = arch;
  m.init_seed = seed;
  Rng rng(seed);

  if (arch.kind == ArchKind::linear_features) {
    m.theta.add_segment(0, nn::Role::weight, arch.basis.P, 1);
    m.theta.finalize();
    const double bound = 1.0 / std::sqrt(static_cast<double>(arch.basis.P));
    fill_uniform(m.theta.view(0), rng, -bound, bound);
    m.theta.check_layout();
    return m;
  }

  const auto plan = plan_layers(arch);
  for (std::size_t l = 0; l < plan.size(); ++l) {
    m.theta.add_segment(static_cast<int>(l), nn::Role::weight, plan[l].fan_in, plan[l].fan_out);
    m.theta.add_segment(static_cast<int>(l), nn::Role::bias, 1, plan[l].fan_out);
  }
  m.theta.finalize();

  for (std::size_t l = 0; l < plan.size(); ++l) {
    const double fan_in = static_cast<double>(plan[l].fan_in);
    double wb;
    if (arch.kind == ArchKind::mlp_sine) {
      // SIREN scheme: U(-1/n, 1/n) on the first layer, U(-sqrt(6/n)/w0, ..)
      // afterwards (the sine layers multiply by w0, restoring the scale).
      wb = (l == 0) ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / arch.sine_omega0;
    } else {
      wb = 1.0 / std::sqrt(fan_in);
    }
    fill_uniform(m.theta.view(static_cast<int>(2 * l)), rng, -wb, wb);
    const double bb = 1.0 / std::sqrt(fan_in);
    fill_uniform(m.theta.view(static_cast<int>(2 * l + 1)), rng, -bb, bb);
  }
  m.theta.check_layout();
  return m;
}

std::vector<ModelState> make_identical_cohort(const ArchSpec& arch,
                                              const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw ConfigError("cohort: need at least two members");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw ConfigError("cohort: duplicate seeds");
  std::vector<ModelState> out;
  out.reserve(seeds.size());
  for (std::uint64_t s : seeds) out.push_back(init_model(arch, s));
  return out;
}

// ---- forward ----------------------------------------------------------------

ForwardGraph stage_forward(nn::Tape& tape, const ModelState& m, const Mat& X) {
  if (X.cols() != m.arch.input_dim) throw ConfigError("forward: input dimension mismatch");
  ForwardGraph g;

  if (m.arch.kind == ArchKind::linear_features) {
    int phi = tape.input(m.arch.basis.design(X));
    int w = tape.param(m.theta.view(0));
    g.params.push_back(w);
    g.out = tape.affine(phi, w);
    return g;
  }

  const auto plan = plan_layers(m.arch);
  int cur = tape.input(X);
  for (std::size_t l = 0; l < plan.size(); ++l) {
    int w = tape.param(m.theta.view(static_cast<int>(2 * l)));
    int b = tape.param(m.theta.view(static_cast<int>(2 * l + 1)));
    g.params.push_back(w);
    g.params.push_back(b);
    cur = tape.affine(cur, w, b);
    if (l + 1 < plan.size()) {
      cur = plan[l].sine ? tape.sine(cur, m.arch.sine_omega0) : tape.relu(cur);
    }
  }
  g.out = cur;
  return g;
}

Mat forward(const ModelState& m, const Mat& X) {
  nn::Tape tape;
  ForwardGraph g = stage_forward(tape, m, X);
  return tape.value(g.out);
}

std::vector<int> argmax_rows(const Mat& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    double bv = logits(i, 0);
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > bv) {  // strict: ties keep the lowest index
        bv = logits(i, k);
        best = static_cast<int>(k);
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

int predict_class(const ModelState& m, const Eigen::RowVectorXd& x) {
  if (!m.arch.is_classifier()) throw ConfigError("predict_class: not a classifier");
  return argmax_rows(forward(m, x))[0];
}

std::vector<int> predict_classes(const ModelState& m, const Mat& X) {
  if (!m.arch.is_classifier()) throw ConfigError("predict_class: not a classifier");
  return argmax_rows(forward(m, X));
}

// ---- checkpoints -------------------------------------------------------------

namespace {

json arch_to_json(const ArchSpec& a) {
  json j;
  switch (a.kind) {
    case ArchKind::mlp_relu: j["kind"] = "mlp_relu"; break;
    case ArchKind::mlp_sine: j["kind"] = "mlp_sine"; break;
    case ArchKind::linear_features: j["kind"] = "linear_features"; break;
  }
  j["input_dim"] = a.input_dim;
  j["output_dim"] = a.output_dim;
  j["hidden"] = a.hidden;
  j["sine_omega0"] = a.sine_omega0;
  if (a.kind == ArchKind::linear_features) {
    j["basis"] = {
        {"kind", a.basis.kind == FeatureBasis::Kind::polynomial ? "polynomial" : "random_fourier"},
        {"P", a.basis.P},
        {"input_dim", a.basis.input_dim},
        {"seed", a.basis.seed},
        {"bandwidth", a.basis.bandwidth}};
  }
  return j;
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec a;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "mlp_relu")
    a.kind = ArchKind::mlp_relu;
  else if (kind == "mlp_sine")
    a.kind = ArchKind::mlp_sine;
  else if (kind == "linear_features")
    a.kind = ArchKind::linear_features;
  else
    throw IoError("checkpoint: unknown arch kind '" + kind + "'");
  a.input_dim = j.at("input_dim").get<int>();
  a.output_dim = j.at("output_dim").get<int>();
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.sine_omega0 = j.at("sine_omega0").get<double>();
  if (a.kind == ArchKind::linear_features) {
    const json& b = j.at("basis");
    a.basis.kind = b.at("kind").get<std::string>() == "polynomial"
                       ? FeatureBasis::Kind::polynomial
                       : FeatureBasis::Kind::random_fourier;
    a.basis.P = b.at("P").get<int>();
    a.basis.input_dim = b.at("input_dim").get<int>();
    a.basis.seed = b.at("seed").get<std::uint64_t>();
    a.basis.bandwidth = b.at("bandwidth").get<double>();
  }
  a.validate();
  return a;
}

}  // namespace

void save_checkpoint(const ModelState& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  json header;
  header["format"] = "d3lab-checkpoint";
  header["version"] = 1;
  header["arch"] = arch_to_json(m.arch);
  header["init_seed"] = m.init_seed;
  header["param_count"] = m.theta.size();
  f << header.dump() << '\n';
  f.write(reinterpret_cast<const char*>(m.theta.data.data()),
          static_cast<std::streamsize>(sizeof(double)) * m.theta.size());
  if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw IoError("checkpoint: missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "d3lab-checkpoint")
    throw IoError("checkpoint: unrecognized format tag");
  ModelState m = init_model(arch_from_json(header.at("arch")),
                            header.at("init_seed").get<std::uint64_t>());
  const auto count = header.at("param_count").get<Eigen::Index>();
  if (count != m.theta.size())
    throw IoError("checkpoint: parameter count does not match the architecture");
  f.read(reinterpret_cast<char*>(m.theta.data.data()),
         static_cast<std::streamsize>(sizeof(double)) * count);
  if (f.gcount() != static_cast<std::streamsize>(sizeof(double)) * count)
    throw IoError("checkpoint: truncated parameter block");
  return m;
}

}  // namespace d3
