#include <doctest.h>

#include <cmath>
#include <vector>

#include "d3/models.hpp"
#include "d3/nn.hpp"
#include "d3/rng.hpp"

using namespace d3;
using nn::ParamVector;
using nn::Role;
using nn::Tape;

namespace {

// Central finite differences of a scalar tape loss with respect to theta.
template <class LossFn>
Vec fd_gradient(Vec theta, LossFn loss_of, double h) {
  Vec g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double save = theta(i);
    theta(i) = save + h;
    const double up = loss_of(theta);
    theta(i) = save - h;
    const double dn = loss_of(theta);
    theta(i) = save;
    g(i) = (up - dn) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const Vec& a, const Vec& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a(i)), std::abs(b(i)), 1e-6});
    worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("autodiff: identity layer forwards its input") {
  Tape t;
  Mat x(1, 2);
  x << 1, 2;
  int xi = t.input(x);
  int w = t.param(Mat::Identity(2, 2));
  int out = t.affine(xi, w);
  CHECK(t.value(out)(0, 0) == doctest::Approx(1.0));
  CHECK(t.value(out)(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("autodiff: one-unit affine by hand") {
  Tape t;
  Mat x(1, 1), w(1, 1), b(1, 1);
  x << 3;
  w << 2;
  b << 1;
  int out = t.affine(t.input(x), t.param(w), t.param(b));
  CHECK(t.value(out)(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("autodiff: d/dtheta of theta^2 at theta=3 is 6") {
  // Parameters pick up gradient where affine consumes them, so route theta
  // through x*theta with x=1: loss = (theta - 0)^2, dL/dtheta = 2*theta.
  Tape t;
  Mat x(1, 1), th(1, 1);
  x << 1;
  th << 3;
  int p = t.param(th);
  int loss = t.mse(t.affine(t.input(x), p, -1), Mat::Zero(1, 1));
  CHECK(t.scalar(loss) == doctest::Approx(9.0));

  ParamVector g;
  g.add_segment(0, Role::weight, 1, 1);
  g.finalize();
  t.backward(loss, {p}, g);
  CHECK(g.data(0) == doctest::Approx(6.0));
}

TEST_CASE("autodiff: mse of a one-unit linear model, hand derived") {
  // pred = w*x + b = 7, target 5: L = 4, dL/dw = 2(pred-y)x = 12, dL/db = 4.
  Tape t;
  Mat x(1, 1), w(1, 1), b(1, 1), y(1, 1);
  x << 3;
  w << 2;
  b << 1;
  y << 5;
  int wi = t.param(w), bi = t.param(b);
  int loss = t.mse(t.affine(t.input(x), wi, bi), y);
  CHECK(t.scalar(loss) == doctest::Approx(4.0));

  ParamVector g;
  g.add_segment(0, Role::weight, 1, 1);
  g.add_segment(0, Role::bias, 1, 1);
  g.finalize();
  t.backward(loss, {wi, bi}, g);
  CHECK(g.data(0) == doctest::Approx(12.0));
  CHECK(g.data(1) == doctest::Approx(4.0));
}

TEST_CASE("autodiff: mse averages over the batch") {
  // X = I so pred_i = w_i: dL/dw_i = 2 (w_i - y_i) / N, one sample per row.
  Tape t;
  Mat X = Mat::Identity(2, 2);
  Mat w(2, 1), y(2, 1);
  w << 1, 3;
  y << 0, 0;
  int p = t.param(w);
  int loss = t.mse(t.affine(t.input(X), p, -1), y);
  CHECK(t.scalar(loss) == doctest::Approx(5.0));  // (1 + 9) / 2

  ParamVector g;
  g.add_segment(0, Role::weight, 2, 1);
  g.finalize();
  t.backward(loss, {p}, g);
  CHECK(g.data(0) == doctest::Approx(1.0));  // 2*(1-0)/2
  CHECK(g.data(1) == doctest::Approx(3.0));
}

TEST_CASE("autodiff: random mlp gradients match central differences") {
  // Three hidden layers, both activation types, several batches. Seeds are
  // fixed, so a pass here is stable; the wider randomized sweep lives in the
  // acceptance suite.
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    ArchSpec arch;
    arch.kind = (seed % 2 == 0) ? ArchKind::mlp_sine : ArchKind::mlp_relu;
    arch.input_dim = 2;
    arch.output_dim = 3;
    arch.hidden = {16, 12, 8};
    ModelState m = init_model(arch, seed);

    Rng r(seed * 97 + 5);
    Mat X(5, 2), Y(5, 3);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = r.uniform(-1, 1);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = r.uniform(-1, 1);

    Tape t;
    auto fg = stage_forward(t, m, X);
    int loss = t.mse(fg.out, Y);
    ParamVector g;
    for (const auto& s : m.theta.segments()) g.add_segment(s.layer, s.role, s.rows, s.cols);
    g.finalize();
    t.backward(loss, fg.params, g);

    auto loss_of = [&](const Vec& theta) {
      ModelState probe = m;
      probe.theta.data = theta;
      Tape tt;
      auto f2 = stage_forward(tt, probe, X);
      return tt.scalar(tt.mse(f2.out, Y));
    };
    Vec fd = fd_gradient(m.theta.data, loss_of, 1e-5);
    CHECK(max_rel_err(g.data, fd) <= 1e-5);
  }
}

TEST_CASE("autodiff: softmax cross-entropy value and gradient") {
  // Two classes, logits (0,0): loss = log 2 exactly.
  {
    Tape t;
    int p = t.param(Mat::Zero(1, 2));
    int loss = t.softmax_xent(p, {0});
    CHECK(t.scalar(loss) == doctest::Approx(std::log(2.0)));
  }
  // Gradient vs central differences on a random classifier.
  ArchSpec arch;
  arch.kind = ArchKind::mlp_relu;
  arch.input_dim = 3;
  arch.output_dim = 4;
  arch.hidden = {10};
  ModelState m = init_model(arch, 17);
  Rng r(99);
  Mat X(6, 3);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = r.uniform(-1, 1);
  std::vector<int> labels = {0, 3, 1, 2, 0, 1};

  Tape t;
  auto fg = stage_forward(t, m, X);
  int loss = t.softmax_xent(fg.out, labels);
  ParamVector g;
  for (const auto& s : m.theta.segments()) g.add_segment(s.layer, s.role, s.rows, s.cols);
  g.finalize();
  t.backward(loss, fg.params, g);

  auto loss_of = [&](const Vec& theta) {
    ModelState probe = m;
    probe.theta.data = theta;
    Tape tt;
    auto f2 = stage_forward(tt, probe, X);
    return tt.scalar(tt.softmax_xent(f2.out, labels));
  };
  Vec fd = fd_gradient(m.theta.data, loss_of, 1e-5);
  CHECK(max_rel_err(g.data, fd) <= 1e-5);
}

TEST_CASE("autodiff: gradient rows of a linear model equal the inputs") {
  // f(x) = theta . x with no bias: d f(x_i) / d theta = x_i.
  Tape t;
  Mat X(3, 2);
  X << 1, 2, 3, 4, 5, 6;
  Mat w(2, 1);
  w << 0.5, -0.25;
  int wi = t.param(w);
  int out = t.affine(t.input(X), wi);

  ParamVector layout;
  layout.add_segment(0, Role::weight, 2, 1);
  layout.finalize();
  Mat rows;
  t.backward_rows(out, 0, {wi}, layout, rows);
  REQUIRE(rows.rows() == 3);
  REQUIRE(rows.cols() == 2);
  CHECK((rows - X).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("autodiff: gradient rows match independent backward sweeps") {
  ArchSpec arch;
  arch.kind = ArchKind::mlp_relu;
  arch.input_dim = 2;
  arch.output_dim = 2;
  arch.hidden = {8};
  ModelState m = init_model(arch, 5);
  Mat X(2, 2);
  X << 0.3, -0.7, 1.1, 0.4;

  for (int channel = 0; channel < 2; ++channel) {
    Tape t;
    auto fg = stage_forward(t, m, X);
    Mat rows;
    t.backward_rows(fg.out, channel, fg.params, m.theta, rows);

    for (int i = 0; i < 2; ++i) {
      // One-sample mse with target f - 1/2 has gradient exactly d f/d theta.
      Mat xi = X.row(i);
      Tape ti;
      auto fgi = stage_forward(ti, m, xi);
      Mat target = ti.value(fgi.out);
      target(0, channel) -= 0.5;
      // Other channels contribute (f_c - y_c) * df_c; zero those residuals.
      int loss = ti.mse(fgi.out, target);
      ParamVector g;
      for (const auto& s : m.theta.segments()) g.add_segment(s.layer, s.role, s.rows, s.cols);
      g.finalize();
      ti.backward(loss, fgi.params, g);
      // mse divides by N=1 and multiplies by 2; residual is 1/2 on the picked
      // channel, so g equals the gradient row exactly.
      CHECK((g.data.transpose() - rows.row(i)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("autodiff: kernel diagonal is nonnegative") {
  ArchSpec arch;
  arch.kind = ArchKind::mlp_sine;
  arch.input_dim = 2;
  arch.output_dim = 1;
  arch.hidden = {12, 12};
  ModelState m = init_model(arch, 31);
  Rng r(8);
  Mat X(7, 2);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = r.uniform(-1, 1);

  Tape t;
  auto fg = stage_forward(t, m, X);
  Mat rows;
  t.backward_rows(fg.out, 0, fg.params, m.theta, rows);
  for (int i = 0; i < 7; ++i) {
    CHECK(rows.row(i).squaredNorm() >= 0.0);
    CHECK(rows.row(i).squaredNorm() > 0.0);  // sine nets have no dead units
  }
}

TEST_CASE("autodiff: relu and sine values") {
  Tape t;
  Mat x(1, 3);
  x << -1.0, 0.0, 2.0;
  int xi = t.input(x);
  int rl = t.relu(xi);
  CHECK(t.value(rl)(0, 0) == 0.0);
  CHECK(t.value(rl)(0, 1) == 0.0);
  CHECK(t.value(rl)(0, 2) == 2.0);

  int sn = t.sine(xi, 2.0);
  CHECK(t.value(sn)(0, 0) == doctest::Approx(std::sin(-2.0)));
  CHECK(t.value(sn)(0, 2) == doctest::Approx(std::sin(4.0)));
}

TEST_CASE("autodiff: check_finite rejects nan and inf") {
  Mat ok = Mat::Ones(2, 2);
  CHECK_NOTHROW(nn::check_finite(ok, "ok"));
  Mat bad = ok;
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(nn::check_finite(bad, "bad"), DivergenceError);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(nn::check_finite(bad, "bad"), DivergenceError);
}

TEST_CASE("autodiff: param vector layout must cover exactly") {
  ParamVector pv;
  pv.add_segment(0, Role::weight, 2, 3);
  pv.add_segment(0, Role::bias, 1, 3);
  pv.finalize();
  CHECK(pv.size() == 9);
  CHECK_NOTHROW(pv.check_layout());
  CHECK(pv.view(0).rows() == 2);
  CHECK(pv.view(0).cols() == 3);

  // Writing through a view lands in the flat vector.
  pv.view(1)(0, 2) = 42.0;
  CHECK(pv.data(8) == 42.0);
}
