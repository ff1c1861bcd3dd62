#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3/models.hpp"

namespace d3 {

// Gradient-flow state of a linear feature-model pair f(x;theta) = sum_i
// theta_i phi_i(x), trained on the same targets y from different inits.
// The flow is d theta/dt = -(2/N) Phi^T (Phi theta - y).
struct LinearFlowState {
  FeatureBasis basis;
  Mat phi;      // N x P design matrix, phi(i, j) = phi_j(x_i)
  Vec theta1, theta2;
  Vec y;        // noisy targets; the difference dynamics never see them
  double t = 0.0;

  void validate() const;
};

LinearFlowState make_linear_flow(const FeatureBasis& basis, const Mat& X, const Vec& y,
                                 std::uint64_t seed1, std::uint64_t seed2);

enum class FlowMode { closed_form, euler };

struct FlowTrajectory {
  std::vector<double> ts;
  std::vector<double> d;            // D_t = (1/N) ||Phi (theta1 - theta2)||^2
  std::vector<double> dDdt_closed;  // closed-form derivative at each sample
};

// Samples D_t at `samples` evenly spaced times in [0, t_end]. closed_form
// evolves the coefficients exactly through the Gram eigenbasis (zero
// eigenvalues ride along as constants); euler uses explicit steps of size h
// (h < 0 selects the stable default 0.1/lambda_max) and throws
// DivergenceError if D_t ever rises beyond roundoff, which for this model
// class can only mean an unstable step.
FlowTrajectory integrate_flow(const LinearFlowState& s, double t_end, FlowMode mode,
                              int samples = 60, double h = -1.0);

// Exact state at absolute time t (closed form).
LinearFlowState advance(const LinearFlowState& s, double t);

// D_t at absolute time t (closed form); accepts negative t, which the
// eigenbasis solution extends through, handy for centered differences at 0.
double flow_d_at(const LinearFlowState& s, double t);

// dD/dt at the state's current coefficients:
//   -4 sum_i <f1 - f2, phi_i>_N^2  =  -(4/N^2) ||Phi^T Phi (theta1-theta2)||^2.
double derivative_closed_form(const LinearFlowState& s);

struct MonotoneVerdict {
  bool monotone = true;
  double max_violation = 0.0;  // largest positive finite-difference slope
};

// True iff every finite-difference slope of the sampled trajectory stays
// below +1e-8 * max(D_0, 1).
MonotoneVerdict verify_monotone(const FlowTrajectory& tr);

// Function-space variant of the same fact: df/dt = -G (f - f_noisy) for any
// symmetric PSD G contracts the pair distance ||f1 - f2||^2 monotonically.
// Throws ConfigError when G is asymmetric or has an eigenvalue below -1e-10.
MonotoneVerdict linear_dynamic_check(const Mat& G, const Vec& f1_0, const Vec& f2_0,
                                     double t_end, int samples = 200);

void write_trajectory_csv(const FlowTrajectory& tr, const std::string& path);

}  // namespace d3
