#include "d3/nn.hpp"

#include <cmath>
#include <limits>

namespace d3::nn {

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw DivergenceError(std::string("non-finite values in ") + what);
}

// ---- ParamVector ----------------------------------------------------------

int ParamVector::add_segment(int layer, Role role, Eigen::Index rows, Eigen::Index cols) {
  if (finalized_) throw ConfigError("ParamVector: add_segment after finalize");
  if (rows < 1 || cols < 1) throw ConfigError("ParamVector: empty segment");
  Segment s;
  s.layer = layer;
  s.role = role;
  s.rows = rows;
  s.cols = cols;
  s.offset = segments_.empty() ? 0 : segments_.back().offset + segments_.back().extent();
  segments_.push_back(s);
  return static_cast<int>(segments_.size()) - 1;
}

void ParamVector::finalize() {
  Eigen::Index total = segments_.empty() ? 0 : segments_.back().offset + segments_.back().extent();
  data = Vec::Zero(total);
  finalized_ = true;
}

void ParamVector::check_layout() const {
  Eigen::Index expect = 0;
  for (const Segment& s : segments_) {
    if (s.offset != expect) throw ConfigError("ParamVector: segments not contiguous");
    expect += s.extent();
  }
  if (expect != data.size()) throw ConfigError("ParamVector: segments do not cover the vector");
}

// ---- Tape forward ---------------------------------------------------------

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(Mat x) {
  Node n;
  n.op = Op::input;
  n.value = std::move(x);
  return push(std::move(n));
}

int Tape::param(Mat w) {
  Node n;
  n.op = Op::param;
  n.value = std::move(w);
  return push(std::move(n));
}

int Tape::affine(int x, int w, int bias) {
  Node n;
  n.op = Op::affine;
  n.a = x;
  n.b = w;
  n.c = bias;
  const Mat& X = nodes_[static_cast<std::size_t>(x)].value;
  const Mat& W = nodes_[static_cast<std::size_t>(w)].value;
  if (X.cols() != W.rows()) throw ConfigError("affine: shape mismatch");
  n.value.noalias() = X * W;
  if (bias >= 0) {
    const Mat& B = nodes_[static_cast<std::size_t>(bias)].value;
    if (B.rows() != 1 || B.cols() != W.cols()) throw ConfigError("affine: bias shape mismatch");
    n.value.rowwise() += B.row(0);
  }
  return push(std::move(n));
}

int Tape::relu(int x) {
  Node n;
  n.op = Op::relu;
  n.a = x;
  n.value = nodes_[static_cast<std::size_t>(x)].value.cwiseMax(0.0);
  return push(std::move(n));
}

int Tape::sine(int x, double omega) {
  Node n;
  n.op = Op::sine;
  n.a = x;
  n.omega = omega;
  n.value = (omega * nodes_[static_cast<std::size_t>(x)].value.array()).sin().matrix();
  return push(std::move(n));
}

int Tape::mse(int pred, Mat target) {
  Node n;
  n.op = Op::mse;
  n.a = pred;
  const Mat& P = nodes_[static_cast<std::size_t>(pred)].value;
  if (P.rows() != target.rows() || P.cols() != target.cols())
    throw ConfigError("mse: prediction/target shape mismatch");
  n.aux = std::move(target);
  n.value = Mat::Constant(1, 1, (P - n.aux).squaredNorm() / static_cast<double>(P.rows()));
  return push(std::move(n));
}

int Tape::softmax_xent(int logits, std::vector<int> labels) {
  Node n;
  n.op = Op::softmax_xent;
  n.a = logits;
  const Mat& Z = nodes_[static_cast<std::size_t>(logits)].value;
  const auto N = Z.rows();
  if (static_cast<Eigen::Index>(labels.size()) != N)
    throw ConfigError("softmax_xent: label count mismatch");
  const int K = static_cast<int>(Z.cols());
  double loss = 0.0;
  n.aux.resize(N, K);
  for (Eigen::Index i = 0; i < N; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= K) throw ConfigError("softmax_xent: label out of range");
    const double m = Z.row(i).maxCoeff();
    Eigen::ArrayXd e = (Z.row(i).array() - m).exp();
    const double s = e.sum();
    n.aux.row(i) = (e / s).matrix();
    loss += m + std::log(s) - Z(i, y);
  }
  n.labels = std::move(labels);
  n.value = Mat::Constant(1, 1, loss / static_cast<double>(N));
  return push(std::move(n));
}

double Tape::scalar(int id) const {
  const Mat& v = nodes_[static_cast<std::size_t>(id)].value;
  if (v.size() != 1) throw ConfigError("scalar: node is not 1x1");
  return v(0, 0);
}

// ---- Reverse sweeps -------------------------------------------------------

namespace {

// Shared adjoint propagation. `adj[id]` holds dL/d(node value); parameter
// adjoints are handed to `sink(param_node, upstream_adjoint, x_value)` at the
// affine nodes instead of materializing weight-shaped grads in `adj`.
template <class WeightSink, class BiasSink>
void sweep(const std::vector<Node>& nodes, std::vector<Mat>& adj, int from,
           WeightSink&& weight_sink, BiasSink&& bias_sink) {
  for (int id = from; id >= 0; --id) {
    const Node& n = nodes[static_cast<std::size_t>(id)];
    if (adj[static_cast<std::size_t>(id)].size() == 0) continue;
    const Mat& g = adj[static_cast<std::size_t>(id)];
    auto bump = [&](int tgt, auto&& expr) {
      Mat& slot = adj[static_cast<std::size_t>(tgt)];
      if (slot.size() == 0)
        slot = expr;
      else
        slot += expr;
    };
    switch (n.op) {
      case Op::input:
      case Op::param:
        break;
      case Op::affine: {
        const Mat& X = nodes[static_cast<std::size_t>(n.a)].value;
        const Mat& W = nodes[static_cast<std::size_t>(n.b)].value;
        // dX for a leaf input would be dead work (first-layer batches are big)
        if (nodes[static_cast<std::size_t>(n.a)].op != Op::input)
          bump(n.a, (g * W.transpose()).eval());
        weight_sink(n.b, g, X);
        if (n.c >= 0) bias_sink(n.c, g);
        break;
      }
      case Op::relu: {
        const Mat& X = nodes[static_cast<std::size_t>(n.a)].value;
        bump(n.a, (g.array() * (X.array() > 0.0).cast<double>()).matrix().eval());
        break;
      }
      case Op::sine: {
        const Mat& X = nodes[static_cast<std::size_t>(n.a)].value;
        bump(n.a, (g.array() * (n.omega * (n.omega * X.array()).cos())).matrix().eval());
        break;
      }
      case Op::mse: {
        const Mat& P = nodes[static_cast<std::size_t>(n.a)].value;
        const double s = 2.0 / static_cast<double>(P.rows()) * g(0, 0);
        bump(n.a, (s * (P - n.aux)).eval());
        break;
      }
      case Op::softmax_xent: {
        const Mat& probs = n.aux;
        Mat d = probs;
        for (Eigen::Index i = 0; i < d.rows(); ++i)
          d(i, n.labels[static_cast<std::size_t>(i)]) -= 1.0;
        d *= g(0, 0) / static_cast<double>(d.rows());
        bump(n.a, d);
        break;
      }
    }
  }
}

}  // namespace

void Tape::backward(int loss_id, const std::vector<int>& param_ids, ParamVector& grad) const {
  if (grad.segments().size() != param_ids.size())
    throw ConfigError("backward: param list does not match gradient layout");
  std::vector<Mat> adj(nodes_.size());
  adj[static_cast<std::size_t>(loss_id)] = Mat::Constant(1, 1, 1.0);

  // param node id -> gradient segment index
  std::vector<int> seg_of(nodes_.size(), -1);
  for (std::size_t k = 0; k < param_ids.size(); ++k)
    seg_of[static_cast<std::size_t>(param_ids[k])] = static_cast<int>(k);

  grad.data.setZero();
  auto weight_sink = [&](int w_node, const Mat& g, const Mat& X) {
    const int seg = seg_of[static_cast<std::size_t>(w_node)];
    if (seg < 0) return;  // frozen parameter
    grad.view(seg).noalias() += X.transpose() * g;
  };
  auto bias_sink = [&](int b_node, const Mat& g) {
    const int seg = seg_of[static_cast<std::size_t>(b_node)];
    if (seg < 0) return;
    grad.view(seg).row(0) += g.colwise().sum();
  };
  sweep(nodes_, adj, loss_id, weight_sink, bias_sink);
  check_finite(grad.data, "gradient");
}

void Tape::backward_rows(int out_id, int channel, const std::vector<int>& param_ids,
                         const ParamVector& layout_like, Mat& rows) const {
  const Mat& out = nodes_[static_cast<std::size_t>(out_id)].value;
  const Eigen::Index N = out.rows();
  if (channel < 0 || channel >= out.cols()) throw ConfigError("backward_rows: bad channel");
  rows.setZero(N, layout_like.size());

  std::vector<Mat> adj(nodes_.size());
  Mat seed = Mat::Zero(N, out.cols());
  seed.col(channel).setOnes();
  adj[static_cast<std::size_t>(out_id)] = std::move(seed);

  std::vector<int> seg_of(nodes_.size(), -1);
  for (std::size_t k = 0; k < param_ids.size(); ++k)
    seg_of[static_cast<std::size_t>(param_ids[k])] = static_cast<int>(k);

  // Per-sample weight gradient is the outer product x_i (dy_i)^T; its
  // column-major flattening lands in the row slice that mirrors the
  // ParamVector segment.
  auto weight_sink = [&](int w_node, const Mat& g, const Mat& X) {
    const int seg = seg_of[static_cast<std::size_t>(w_node)];
    if (seg < 0) return;
    const Segment& s = layout_like.segment(seg);
    for (Eigen::Index c = 0; c < s.cols; ++c)
      for (Eigen::Index i = 0; i < N; ++i)
        rows.block(i, s.offset + c * s.rows, 1, s.rows) += g(i, c) * X.row(i);
  };
  auto bias_sink = [&](int b_node, const Mat& g) {
    const int seg = seg_of[static_cast<std::size_t>(b_node)];
    if (seg < 0) return;
    const Segment& s = layout_like.segment(seg);
    rows.block(0, s.offset, N, s.cols) += g;
  };
  sweep(nodes_, adj, out_id, weight_sink, bias_sink);
}

// ---- Optimizer ------------------------------------------------------------

Optimizer::Optimizer(const OptimizerConfig& cfg, Eigen::Index n) : cfg_(cfg) {
  if (cfg.lr <= 0.0) throw ConfigError("optimizer: lr must be positive");
  slot1_ = Vec::Zero(n);
  if (cfg.kind == OptimizerConfig::Kind::adam) slot2_ = Vec::Zero(n);
}

void Optimizer::step(Vec& theta, const Vec& grad) {
  if (theta.size() != slot1_.size() || grad.size() != slot1_.size())
    throw ConfigError("optimizer: size mismatch");
  ++t_;
  switch (cfg_.kind) {
    case OptimizerConfig::Kind::sgd_momentum: {
      if (cfg_.weight_decay != 0.0)
        slot1_ = cfg_.momentum * slot1_ + grad + cfg_.weight_decay * theta;
      else
        slot1_ = cfg_.momentum * slot1_ + grad;
      theta -= cfg_.lr * slot1_;
      break;
    }
    case OptimizerConfig::Kind::adam: {
      Vec g = grad;
      if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * theta;
      slot1_ = cfg_.beta1 * slot1_ + (1.0 - cfg_.beta1) * g;
      slot2_ = cfg_.beta2 * slot2_ + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      theta.array() -=
          cfg_.lr * (slot1_.array() / c1) / ((slot2_.array() / c2).sqrt() + cfg_.eps);
      break;
    }
  }
  check_finite(theta, "parameters after optimizer step");
}

}  // namespace d3::nn
