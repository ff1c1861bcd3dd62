#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3/nn.hpp"

namespace d3 {

enum class ArchKind { mlp_relu, mlp_sine, linear_features };

// Fixed dictionary of basis functions phi_i for the explicit linear models.
struct FeatureBasis {
  enum class Kind { polynomial, random_fourier };
  Kind kind = Kind::polynomial;
  int P = 1;
  int input_dim = 1;
  std::uint64_t seed = 0;    // random_fourier draws
  double bandwidth = 1.0;    // random_fourier frequency scale

  // N x P matrix of phi_j(x_i). polynomial: phi_j(x) = x^j (1-d inputs only);
  // random_fourier: phi_j(x) = cos(w_j.x + p_j), w ~ N(0, bandwidth^2 I),
  // p ~ U[0, 2pi), both fixed by `seed`.
  Mat design(const Mat& X) const;
  void validate() const;
};

struct ArchSpec {
  ArchKind kind = ArchKind::mlp_relu;
  int input_dim = 1;
  int output_dim = 1;
  std::vector<int> hidden;     // MLP kinds only, non-empty
  double sine_omega0 = 30.0;   // first-layer frequency for mlp_sine
  FeatureBasis basis;          // linear_features only

  void validate() const;
  bool is_classifier() const { return output_dim >= 2; }
  std::string to_string() const;  // stable one-line descriptor, used as arch hash
};

struct ModelState {
  ArchSpec arch;
  nn::ParamVector theta;
  std::uint64_t init_seed = 0;
};

ModelState init_model(const ArchSpec& arch, std::uint64_t seed);

// J models, identical architecture, distinct seeds (and hence distinct
// parameters); the members never alias each other's storage.
std::vector<ModelState> make_identical_cohort(const ArchSpec& arch,
                                              const std::vector<std::uint64_t>& seeds);

// Builds the forward graph on `tape` and returns the output node plus the
// param node ids aligned with the model's ParamVector segments.
struct ForwardGraph {
  int out = -1;
  std::vector<int> params;
};
ForwardGraph stage_forward(nn::Tape& tape, const ModelState& m, const Mat& X);

// Plain evaluation, no tape kept around.
Mat forward(const ModelState& m, const Mat& X);

// Argmax over logits, ties resolved to the lowest index.
int predict_class(const ModelState& m, const Eigen::RowVectorXd& x);
std::vector<int> predict_classes(const ModelState& m, const Mat& X);
std::vector<int> argmax_rows(const Mat& logits);

// Checkpoint file: one JSON header line (arch, seed, count), then the raw
// little-endian float64 parameter block.
void save_checkpoint(const ModelState& m, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace d3
