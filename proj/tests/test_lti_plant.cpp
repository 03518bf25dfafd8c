#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gbc/errors.hpp"
#include "gbc/lti_plant.hpp"

using namespace gbc;

namespace {

StochasticLtiModel scalar_model(double a, double b, double c, double d) {
  StochasticLtiModel m;
  m.a = Matrix::Constant(1, 1, a);
  m.b = Matrix::Constant(1, 1, b);
  m.c = Matrix::Constant(1, 1, c);
  m.d = Matrix::Constant(1, 1, d);
  m.sigma_xi = Matrix::Zero(1, 1);
  m.sigma_eta = Matrix::Zero(1, 1);
  return m;
}

Vector randn(std::mt19937_64& gen, Eigen::Index n) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(gen);
  return v;
}

}  // namespace

TEST_CASE("model validation") {
  StochasticLtiModel m = scalar_model(0.5, 1, 1, 0);
  CHECK_NOTHROW(m.validate());
  m.b = Matrix::Zero(2, 1);
  CHECK_THROWS_AS(m.validate(), ShapeError);
  m = scalar_model(0.5, 1, 1, 0);
  m.sigma_eta(0, 0) = -1.0;
  CHECK_THROWS(m.validate());
}

TEST_CASE("block operators for L = 1 and L = 2") {
  std::mt19937_64 gen(1);
  const StochasticLtiModel m = random_stable_model(3, 2, 2, 0.8, 0.1, 0.1, gen);
  const BlockOperators b1 = build_block_operators(m, 1);
  CHECK(b1.observability == m.c);
  CHECK(b1.toeplitz_u == m.d);
  CHECK(b1.toeplitz_xi == Matrix::Zero(2, 3));

  const StochasticLtiModel s = scalar_model(0.7, 2.0, 3.0, 0.5);
  const BlockOperators b2 = build_block_operators(s, 2);
  Matrix o(2, 1), tu(2, 2);
  o << 3.0, 3.0 * 0.7;
  tu << 0.5, 0.0, 3.0 * 2.0, 0.5;
  CHECK(b2.observability.isApprox(o));
  CHECK(b2.toeplitz_u.isApprox(tu));
}

TEST_CASE("noise Toeplitz is the input Toeplitz with B = I and D = 0") {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    StochasticLtiModel m = random_stable_model(3, 1, 2, 0.9, 0.1, 0.1, gen);
    StochasticLtiModel mod = m;
    mod.b = Matrix::Identity(3, 3);
    mod.d = Matrix::Zero(2, 3);
    for (Eigen::Index len = 1; len <= 6; ++len) {
      CHECK(build_block_operators(m, len).toeplitz_xi == build_block_operators(mod, len).toeplitz_u);
    }
  }
}

TEST_CASE("step substitution") {
  const StochasticLtiModel m = scalar_model(0.5, 1, 1, 0);
  const Vector zero = Vector::Zero(1);
  const StepResult z = step(m, zero, zero, zero, zero);
  CHECK(z.x_next(0) == 0.0);
  CHECK(z.y(0) == 0.0);
  const StepResult r = step(m, zero, Vector::Ones(1), zero, zero);
  CHECK(r.x_next(0) == 1.0);
  CHECK(r.y(0) == 0.0);
}

TEST_CASE("recursion equals the stacked operator form") {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> dim(1, 3), len_d(1, 8);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const StochasticLtiModel m = random_stable_model(dim(gen), dim(gen), dim(gen), 0.95, 0.1, 0.1, gen);
    const Eigen::Index len = len_d(gen);
    const Eigen::Index n = m.n(), mi = m.m(), p = m.p();
    const Vector x0 = randn(gen, n);
    const Vector u = randn(gen, mi * len), xi = randn(gen, n * len), eta = randn(gen, p * len);
    Vector x = x0, y(p * len);
    for (Eigen::Index t = 0; t < len; ++t) {
      const StepResult r = step(m, x, u.segment(t * mi, mi), xi.segment(t * n, n), eta.segment(t * p, p));
      y.segment(t * p, p) = r.y;
      x = r.x_next;
    }
    const BlockOperators ops = build_block_operators(m, len);
    const Vector stacked = ops.observability * x0 + ops.toeplitz_u * u + ops.toeplitz_xi * xi + eta;
    worst = std::max(worst, (stacked - y).lpNorm<Eigen::Infinity>() / (1.0 + y.lpNorm<Eigen::Infinity>()));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("noiseless simulation is deterministic and matches the recursion") {
  std::mt19937_64 gen(4);
  const StochasticLtiModel m = random_stable_model(2, 1, 1, 0.8, 0.0, 0.0, gen);
  Matrix u(1, 100);
  for (Eigen::Index t = 0; t < 100; ++t) u(0, t) = std::sin(0.1 * static_cast<double>(t));
  const Vector x0 = Vector::Ones(2);
  const Simulation a = simulate(m, x0, u, 100, 1);
  const Simulation b = simulate(m, x0, u, 100, 999);
  CHECK(a.trajectory.samples() == b.trajectory.samples());

  Vector x = x0;
  const Vector zero_n = Vector::Zero(2), zero_p = Vector::Zero(1);
  double err = 0.0;
  for (Eigen::Index t = 0; t < 100; ++t) {
    const StepResult r = step(m, x, u.col(t), zero_n, zero_p);
    err = std::max(err, std::abs(r.y(0) - a.trajectory.outputs()(0, t)));
    x = r.x_next;
  }
  CHECK(err < 1e-12);
}

TEST_CASE("seeded simulation is reproducible") {
  const StochasticLtiModel m = default_benchmark(0.1, 0.1);
  const Simulation a = simulate(m, Vector(Vector::Zero(m.n())), WhiteInput{1.0}, 200, 42);
  const Simulation b = simulate(m, Vector(Vector::Zero(m.n())), WhiteInput{1.0}, 200, 42);
  const Simulation c = simulate(m, Vector(Vector::Zero(m.n())), WhiteInput{1.0}, 200, 43);
  CHECK(a.trajectory.samples() == b.trajectory.samples());
  CHECK(a.trajectory.samples() != c.trajectory.samples());
  CHECK_FALSE(a.unstable);
}

TEST_CASE("unstable plants warn instead of throwing") {
  const StochasticLtiModel m = scalar_model(1.01, 1, 1, 0);
  Simulation s = simulate(m, Vector(Vector::Zero(1)), WhiteInput{1.0}, 20, 1);
  CHECK(s.unstable);
}

TEST_CASE("empirical state covariance matches the Lyapunov solution") {
  std::mt19937_64 gen(5);
  const StochasticLtiModel m = random_stable_model(2, 1, 1, 0.6, 0.3, 0.1, gen);
  const double input_std = 0.7;
  const Matrix sigma = stationary_state_cov(m, input_std);
  const Matrix oracle = lyap_discrete(m.a, input_std * input_std * m.b * m.b.transpose() + m.sigma_xi);
  CHECK((sigma - oracle).norm() < 1e-12 * (1.0 + oracle.norm()));

  const Eigen::Index horizon = 200000;
  const Simulation s =
      simulate(m, GaussianState{Vector::Zero(2), sigma}, WhiteInput{input_std}, horizon, 77);
  const Matrix& xs = s.states;
  const Matrix emp = xs * xs.transpose() / static_cast<double>(xs.cols());
  CHECK((emp - sigma).norm() / sigma.norm() < 0.05);
}

TEST_CASE("default benchmark is stable and observable") {
  const StochasticLtiModel m = default_benchmark();
  CHECK(m.n() == 3);
  CHECK(m.m() == 1);
  CHECK(m.p() == 1);
  CHECK(spectral_radius(m.a) < 1.0);
  CHECK(numerical_rank(build_block_operators(m, m.n()).observability) == m.n());
  Matrix ctrb(3, 3);
  ctrb << m.b, m.a * m.b, m.a * m.a * m.b;
  CHECK(numerical_rank(ctrb) == 3);
}

TEST_CASE("noise streams are independent per source") {
  const StochasticLtiModel m = default_benchmark(0.5, 0.5);
  NoiseStreams a(7), b(7);
  // Draws on the other sources must not perturb the process stream.
  const Vector eta_b = b.measurement(m);
  (void)b.input(1, 1.0);
  CHECK(a.process(m) == b.process(m));
  CHECK(a.measurement(m) == eta_b);
}

TEST_CASE("psd factor reproduces the matrix") {
  Matrix s(3, 3);
  s << 2, 1, 0, 1, 2, 0, 0, 0, 0;
  const Matrix f = psd_factor(s);
  CHECK((f * f.transpose() - s).norm() < 1e-12);
}
