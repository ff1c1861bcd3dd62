#include "d3/linear_flow.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "d3/csv.hpp"

namespace d3 {

namespace {

// phi1(z) = (e^z - 1)/z, the entire function behind the forced-mode solution;
// expm1 keeps it accurate near 0, where it tends to 1.
double phi1(double z) { return z == 0.0 ? 1.0 : std::expm1(z) / z; }

struct EigenFlow {
  Mat V;
  Vec lam;
  Vec c;          // V^T ((1/N) Phi^T y), forcing in the eigenbasis
  Vec u1_0, u2_0; // V^T theta at the state's t
};

EigenFlow decompose(const LinearFlowState& s) {
  const double N = static_cast<double>(s.phi.rows());
  Mat G = (s.phi.transpose() * s.phi) / N;
  Eigen::SelfAdjointEigenSolver<Mat> es(G);
  if (es.info() != Eigen::Success)
    throw ConfigError("linear flow: Gram eigendecomposition failed");
  EigenFlow ef;
  ef.V = es.eigenvectors();
  // G is PSD by construction; negative computed eigenvalues are roundoff
  // from ill-conditioned bases and would blow up e^{-2 lambda t}.
  ef.lam = es.eigenvalues().cwiseMax(0.0);
  ef.c = ef.V.transpose() * (s.phi.transpose() * s.y / N);
  ef.u1_0 = ef.V.transpose() * s.theta1;
  ef.u2_0 = ef.V.transpose() * s.theta2;
  return ef;
}

// u_p(t) = u_p(0) e^{-2 lam_p t} + 2 c_p t phi1(-2 lam_p t); at lam_p = 0
// this degenerates to u_p(0) + 2 c_p t, and c_p vanishes on the Gram null
// space anyway (G v = 0 forces Phi v = 0), so null modes sit still.
Vec evolve_modes(const Vec& u0, const Vec& lam, const Vec& c, double t) {
  Vec u(u0.size());
  for (Eigen::Index p = 0; p < u0.size(); ++p) {
    const double z = -2.0 * lam(p) * t;
    u(p) = u0(p) * std::exp(z) + 2.0 * c(p) * t * phi1(z);
  }
  return u;
}

double d_of_thetas(const LinearFlowState& s, const Vec& th1, const Vec& th2) {
  return (s.phi * (th1 - th2)).squaredNorm() / static_cast<double>(s.phi.rows());
}

double deriv_of_delta(const LinearFlowState& s, const Vec& delta) {
  const double N = static_cast<double>(s.phi.rows());
  const Vec q = s.phi.transpose() * (s.phi * delta);
  return -4.0 * q.squaredNorm() / (N * N);
}

}  // namespace

void LinearFlowState::validate() const {
  if (phi.size() == 0 || phi.cols() < 1) throw ConfigError("linear flow: Phi must be N x P, P >= 1");
  if (!phi.allFinite()) throw ConfigError("linear flow: Phi has non-finite entries");
  if (theta1.size() != phi.cols() || theta2.size() != phi.cols())
    throw ConfigError("linear flow: coefficient length must equal P");
  if (y.size() != phi.rows()) throw ConfigError("linear flow: y length must equal N");
  if (!y.allFinite() || !theta1.allFinite() || !theta2.allFinite())
    throw ConfigError("linear flow: state has non-finite entries");
}

LinearFlowState make_linear_flow(const FeatureBasis& basis, const Mat& X, const Vec& y,
                                 std::uint64_t seed1, std::uint64_t seed2) {
  ArchSpec arch;
  arch.kind = ArchKind::linear_features;
  arch.input_dim = basis.input_dim;
  arch.output_dim = 1;
  arch.basis = basis;
  LinearFlowState s;
  s.basis = basis;
  s.phi = basis.design(X);
  s.theta1 = init_model(arch, seed1).theta.data;
  s.theta2 = init_model(arch, seed2).theta.data;
  s.y = y;
  s.validate();
  return s;
}

FlowTrajectory integrate_flow(const LinearFlowState& s, double t_end, FlowMode mode, int samples,
                              double h) {
  s.validate();
  if (!(t_end > 0.0)) throw ConfigError("integrate_flow: t_end must be positive");
  if (samples < 2) throw ConfigError("integrate_flow: need at least 2 samples");

  FlowTrajectory tr;
  tr.ts.resize(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k)
    tr.ts[static_cast<std::size_t>(k)] = t_end * static_cast<double>(k) / (samples - 1);

  const EigenFlow ef = decompose(s);
  const double lam_max = ef.lam.size() ? ef.lam.maxCoeff() : 0.0;

  if (mode == FlowMode::closed_form) {
    for (double t : tr.ts) {
      const Vec u1 = evolve_modes(ef.u1_0, ef.lam, ef.c, t);
      const Vec u2 = evolve_modes(ef.u2_0, ef.lam, ef.c, t);
      const Vec du = u1 - u2;
      tr.d.push_back(du.cwiseProduct(du).dot(ef.lam) /* = ||Phi V du||^2 / N */);
      tr.dDdt_closed.push_back(-4.0 * ef.lam.cwiseProduct(du).squaredNorm());
    }
    return tr;
  }

  // Explicit Euler on theta_{k+1} = theta_k - 2h (G theta_k - (1/N) Phi^T y),
  // segment lengths adjusted so every sample time is hit exactly.
  const double N = static_cast<double>(s.phi.rows());
  const Mat G = (s.phi.transpose() * s.phi) / N;
  const Vec f = s.phi.transpose() * s.y / N;
  if (h <= 0.0) h = 0.1 / std::max(lam_max, 1e-12);

  Vec th1 = s.theta1, th2 = s.theta2;
  const double rise_tol = 1e-8 * std::max(d_of_thetas(s, th1, th2), 1.0);
  double prev_d = 0.0;
  for (std::size_t k = 0; k < tr.ts.size(); ++k) {
    if (k > 0) {
      const double seg = tr.ts[k] - tr.ts[k - 1];
      const long n = std::max<long>(1, static_cast<long>(std::ceil(seg / h)));
      const double hs = seg / static_cast<double>(n);
      for (long i = 0; i < n; ++i) {
        th1 -= 2.0 * hs * (G * th1 - f);
        th2 -= 2.0 * hs * (G * th2 - f);
      }
    }
    const double d = d_of_thetas(s, th1, th2);
    if (k > 0 && d > prev_d + rise_tol) {
      std::ostringstream os;
      os << "integrate_flow: euler step unstable, D rose from " << prev_d << " to " << d
         << " at t=" << tr.ts[k] << " (h=" << h << ", lambda_max=" << lam_max << ")";
      throw DivergenceError(os.str());
    }
    prev_d = d;
    tr.d.push_back(d);
    tr.dDdt_closed.push_back(deriv_of_delta(s, th1 - th2));
  }
  return tr;
}

LinearFlowState advance(const LinearFlowState& s, double t) {
  s.validate();
  const EigenFlow ef = decompose(s);
  LinearFlowState out = s;
  out.theta1 = ef.V * evolve_modes(ef.u1_0, ef.lam, ef.c, t);
  out.theta2 = ef.V * evolve_modes(ef.u2_0, ef.lam, ef.c, t);
  out.t = s.t + t;
  return out;
}

double flow_d_at(const LinearFlowState& s, double t) {
  const EigenFlow ef = decompose(s);
  const Vec du = evolve_modes(ef.u1_0, ef.lam, ef.c, t) - evolve_modes(ef.u2_0, ef.lam, ef.c, t);
  return du.cwiseProduct(du).dot(ef.lam);
}

double derivative_closed_form(const LinearFlowState& s) {
  s.validate();
  return deriv_of_delta(s, s.theta1 - s.theta2);
}

MonotoneVerdict verify_monotone(const FlowTrajectory& tr) {
  if (tr.ts.size() != tr.d.size() || tr.ts.size() < 2)
    throw ConfigError("verify_monotone: trajectory needs matching ts/d with >= 2 samples");
  const double tol = 1e-8 * std::max(tr.d.front(), 1.0);
  MonotoneVerdict v;
  for (std::size_t k = 0; k + 1 < tr.ts.size(); ++k) {
    const double dt = tr.ts[k + 1] - tr.ts[k];
    if (dt <= 0.0) throw ConfigError("verify_monotone: ts must be strictly increasing");
    const double slope = (tr.d[k + 1] - tr.d[k]) / dt;
    if (slope > tol) {
      v.monotone = false;
      v.max_violation = std::max(v.max_violation, slope);
    }
  }
  return v;
}

MonotoneVerdict linear_dynamic_check(const Mat& G, const Vec& f1_0, const Vec& f2_0, double t_end,
                                     int samples) {
  if (G.rows() != G.cols() || G.rows() < 1) throw ConfigError("linear_dynamic_check: G must be square");
  if (f1_0.size() != G.rows() || f2_0.size() != G.rows())
    throw ConfigError("linear_dynamic_check: state vectors must match G");
  if (!(t_end > 0.0) || samples < 2) throw ConfigError("linear_dynamic_check: bad t_end/samples");
  const double asym = (G - G.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, G.cwiseAbs().maxCoeff()))
    throw ConfigError("linear_dynamic_check: G is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(G);
  if (es.info() != Eigen::Success) throw ConfigError("linear_dynamic_check: eigendecomposition failed");
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw ConfigError("linear_dynamic_check: G is not PSD (eigenvalue below -1e-10)");

  // The pair difference evolves autonomously: d(t) = ||e^{-Gt} (f1-f2)||^2.
  const Vec dc = es.eigenvectors().transpose() * (f1_0 - f2_0);
  FlowTrajectory tr;
  for (int k = 0; k < samples; ++k) {
    const double t = t_end * static_cast<double>(k) / (samples - 1);
    double acc = 0.0;
    for (Eigen::Index p = 0; p < dc.size(); ++p) {
      const double m = dc(p) * std::exp(-es.eigenvalues()(p) * t);
      acc += m * m;
    }
    tr.ts.push_back(t);
    tr.d.push_back(acc);
  }
  return verify_monotone(tr);
}

void write_trajectory_csv(const FlowTrajectory& tr, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"t", "D_t", "dDdt_closed_form"});
  for (std::size_t k = 0; k < tr.ts.size(); ++k) {
    csv.begin_row();
    csv.field(tr.ts[k]);
    csv.field(tr.d[k]);
    if (k < tr.dDdt_closed.size()) csv.field(tr.dDdt_closed[k]);
    else csv.empty_field();
    csv.end_row();
  }
}

}  // namespace d3
