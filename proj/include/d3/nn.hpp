#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "d3/errors.hpp"

namespace d3 {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace nn {

// ---------------------------------------------------------------------------
// ParamVector: one flat 64-bit vector per model, carved into named segments.
// Each segment views a (rows x cols) column-major matrix inside the flat
// storage, so optimizers work on the vector while layers see matrices.
// ---------------------------------------------------------------------------

enum class Role { weight, bias };

struct Segment {
  int layer = 0;
  Role role = Role::weight;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index extent() const { return rows * cols; }
};

class ParamVector {
 public:
  // Builder: declare segments in layer order, then finalize() to allocate.
  int add_segment(int layer, Role role, Eigen::Index rows, Eigen::Index cols);
  void finalize();

  Eigen::Index size() const { return data.size(); }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(int i) const { return segments_.at(static_cast<std::size_t>(i)); }

  Eigen::Map<Mat> view(int i) {
    const Segment& s = segment(i);
    return Eigen::Map<Mat>(data.data() + s.offset, s.rows, s.cols);
  }
  Eigen::Map<const Mat> view(int i) const {
    const Segment& s = segment(i);
    return Eigen::Map<const Mat>(data.data() + s.offset, s.rows, s.cols);
  }

  // Segments must be disjoint and cover the vector exactly; throws otherwise.
  void check_layout() const;

  Vec data;

 private:
  std::vector<Segment> segments_;
  bool finalized_ = false;
};

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over batched matrix ops. Values are (batch x dim)
// matrices; one node per op. The set of ops is exactly what the MLP zoo
// needs: affine layers, relu/sine activations, mean-squared-error and
// softmax cross-entropy heads.
// ---------------------------------------------------------------------------

enum class Op {
  input,         // leaf, constant batch
  param,         // leaf, trainable matrix
  affine,        // x*W + broadcast bias (bias optional)
  relu,
  sine,          // sin(omega * x)
  mse,           // (1/N) sum_i ||pred_i - target_i||^2      -> 1x1
  softmax_xent,  // (1/N) sum_i [logsumexp(z_i) - z_{i,y_i}] -> 1x1
};

struct Node {
  Op op;
  Mat value;
  int a = -1, b = -1, c = -1;  // operand node ids (affine: x, W, bias)
  double omega = 1.0;
  Mat aux;                      // mse: target; softmax_xent: cached probabilities
  std::vector<int> labels;      // softmax_xent targets
};

class Tape {
 public:
  int input(Mat x);
  int param(Mat w);
  int affine(int x, int w, int bias = -1);
  int relu(int x);
  int sine(int x, double omega);
  int mse(int pred, Mat target);
  int softmax_xent(int logits, std::vector<int> labels);

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  double scalar(int id) const;
  std::size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Reverse sweep from a scalar loss. Parameter gradients are accumulated
  // into `grad`, whose layout must list the tape's param nodes in
  // `param_ids` order, one per segment.
  void backward(int loss_id, const std::vector<int>& param_ids, ParamVector& grad) const;

  // Per-sample parameter gradients of one output channel: row i of `rows`
  // becomes d out(i, channel) / d theta, laid out like the ParamVector.
  // One reverse sweep covers the whole batch because every op here is
  // row-local in its batch argument.
  void backward_rows(int out_id, int channel, const std::vector<int>& param_ids,
                     const ParamVector& layout_like, Mat& rows) const;

 private:
  int push(Node n);
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Optimizers. SGD keeps the classic form: v = mu*v + (g + wd*theta),
// theta -= lr*v, i.e. L2 decay enters as a gradient term (same convention
// for Adam: plain L2, not decoupled).
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  enum class Kind { sgd_momentum, adam };
  Kind kind = Kind::sgd_momentum;
  double lr = 1e-3;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, Eigen::Index n);
  void step(Vec& theta, const Vec& grad);
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  Vec slot1_, slot2_;  // momentum / adam first moment, adam second moment
  long t_ = 0;
};

void check_finite(const Mat& m, const char* what);

}  // namespace nn
}  // namespace d3
