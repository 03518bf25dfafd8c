#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gbc/controllers.hpp"
#include "gbc/errors.hpp"
#include "gbc/instances.hpp"

using namespace gbc;

namespace {

double inf_norm(const Vector& v) { return v.lpNorm<Eigen::Infinity>(); }

// Normal equations of the unconstrained SPC problem.
Vector spc_closed_form(const PredictiveModel& pm, const Vector& w_ini, const ControlProblem& cp) {
  const Matrix& m = pm.m_u;
  const Matrix h = m.transpose() * cp.q * m + cp.r;
  const Vector rhs = m.transpose() * cp.q * (cp.y_ref - pm.m_ini * w_ini) + cp.r * cp.u_ref;
  return h.ldlt().solve(rhs);
}

// Stationary point of |u-ur|_R^2 + |mu-yr|_Q^2 + (lambda/2)|mu - M u - c|_S^2 in (u, mu).
std::pair<Vector, Vector> optimistic_oracle(const PredictiveModel& pm, const Vector& w_ini,
                                            const ControlProblem& cp, double lambda) {
  const Matrix s = pm.cov.inverse();
  const Matrix& m = pm.m_u;
  const Eigen::Index nu = m.cols(), ny = m.rows();
  const double k = lambda / 2.0;
  Matrix a(nu + ny, nu + ny);
  a << cp.r + k * m.transpose() * s * m, -k * m.transpose() * s, -k * s * m, cp.q + k * s;
  const Vector c = pm.m_ini * w_ini;
  Vector b(nu + ny);
  b << cp.r * cp.u_ref - k * m.transpose() * s * c, cp.q * cp.y_ref + k * s * c;
  const Vector z = a.fullPivLu().solve(b);
  return {z.head(nu), z.tail(ny)};
}

PredictiveModel scalar_model(double m_u, double cov) {
  PredictiveModel pm;
  pm.dims = {1, 1};
  pm.l_ini = 1;
  pm.l_f = 1;
  pm.m_u = Matrix::Constant(1, 1, m_u);
  pm.m_ini = Matrix::Constant(1, 2, 0.3);
  pm.cov = Matrix::Constant(1, 1, cov);
  pm.sample_count = 10;
  return pm;
}

}  // namespace

TEST_CASE("control problem validation and cost") {
  ControlProblem cp = ControlProblem::make({1, 2}, 2, 3, 2.0, 0.5);
  CHECK_NOTHROW(cp.validate());
  CHECK(cp.q.rows() == 6);
  CHECK(cp.r.rows() == 3);
  const Vector u = Vector::Ones(3), y = Vector::Ones(6);
  CHECK(cp.cost(u, y) == doctest::Approx(3 * 0.5 + 6 * 2.0));
  cp.r(0, 0) = 0.0;
  CHECK_THROWS(cp.validate());
  cp = ControlProblem::make({1, 1}, 1, 2);
  cp.u_ref = Vector::Zero(3);
  CHECK_THROWS_AS(cp.validate(), ShapeError);
}

TEST_CASE("regularizer names") {
  for (Regularizer r : {Regularizer::Proj2, Regularizer::Sq2, Regularizer::L1}) {
    CHECK(parse_regularizer(to_string(r)) == r);
  }
  CHECK_THROWS_AS(parse_regularizer("l3"), ConfigError);
}

TEST_CASE("spc: origin, closed form and box clipping") {
  std::mt19937_64 gen(1);
  for (int k = 0; k < 20; ++k) {
    ControlInstance inst = random_instance(gen, {});
    const ControlResult r = spc(inst.pm, inst.w_ini, inst.cp);
    const Vector oracle = spc_closed_form(inst.pm, inst.w_ini, inst.cp);
    CHECK(inf_norm(r.u_f - oracle) <= 1e-7 * (1.0 + inf_norm(oracle)));
    CHECK(inf_norm(r.y_pred.mean - inst.pm.mean(inst.w_ini, r.u_f)) < 1e-9 * (1.0 + inf_norm(r.y_pred.mean)));

    ControlProblem zero = inst.cp;
    zero.u_ref.setZero();
    zero.y_ref.setZero();
    CHECK(inf_norm(spc(inst.pm, Vector::Zero(inst.w_ini.size()), zero).u_f) < 1e-9);
  }

  std::mt19937_64 gen2(2);
  int clipped = 0;
  for (int k = 0; k < 20; ++k) {
    ControlInstance inst = random_instance(gen2, {});
    ControlProblem cp = inst.cp;
    const Eigen::Index m = cp.dims.m;
    cp.u_box = Box::repeat(Vector::Constant(m, -0.1), Vector::Constant(m, 0.1), cp.l_f);
    const ControlResult r = spc(inst.pm, inst.w_ini, cp);
    const Matrix& mu = inst.pm.m_u;
    const Vector c = inst.pm.m_ini * inst.w_ini;
    // Gradient of J along u; each coordinate is at a bound or stationary.
    const Vector grad = 2.0 * cp.r * (r.u_f - cp.u_ref) + 2.0 * mu.transpose() * cp.q * (mu * r.u_f + c - cp.y_ref);
    const double tol = 1e-6 * (1.0 + inf_norm(grad));
    for (Eigen::Index i = 0; i < r.u_f.size(); ++i) {
      CHECK(r.u_f(i) >= -0.1 - 1e-6);
      CHECK(r.u_f(i) <= 0.1 + 1e-6);
      if (r.u_f(i) <= -0.1 + 1e-7) {
        CHECK(grad(i) >= -tol);
        ++clipped;
      } else if (r.u_f(i) >= 0.1 - 1e-7) {
        CHECK(grad(i) <= tol);
        ++clipped;
      } else {
        CHECK(std::abs(grad(i)) <= tol);
      }
    }
  }
  CHECK(clipped > 0);
}

TEST_CASE("spc with output bounds") {
  std::mt19937_64 gen(3);
  ControlInstance inst = random_instance(gen, {});
  ControlProblem cp = inst.cp;
  const ControlResult free = spc(inst.pm, inst.w_ini, cp);
  // A band around the prediction of a zero input is feasible by construction.
  const Vector y0 = inst.pm.mean(inst.w_ini, Vector::Zero(cp.u_ref.size()));
  cp.y_box = Box{y0.array() - 0.05, y0.array() + 0.05};
  const ControlResult r = spc(inst.pm, inst.w_ini, cp);
  CHECK(((r.y_pred.mean - y0).array().abs() <= 0.05 + 1e-6).all());
  CHECK(inf_norm(r.y_pred.mean - inst.pm.mean(inst.w_ini, r.u_f)) < 1e-6);
  CHECK(r.objective >= free.objective - 1e-9);
}

TEST_CASE("certainty equivalence matches spc up to the trace term") {
  std::mt19937_64 gen(4);
  for (int k = 0; k < 30; ++k) {
    ControlInstance inst = random_instance(gen, {});
    const ControlResult a = spc(inst.pm, inst.w_ini, inst.cp);
    const ControlResult b = certainty_equivalence(inst.pm, inst.w_ini, inst.cp);
    CHECK(inf_norm(a.u_f - b.u_f) <= 1e-8);
    const double tr = (inst.cp.q * inst.pm.cov).trace();
    CHECK(std::abs(b.objective - a.objective - tr) <= 1e-8 * (1.0 + std::abs(b.objective)));
    PredictiveModel exact = inst.pm;
    exact.cov.setZero();
    CHECK(spc(exact, inst.w_ini, inst.cp).objective == certainty_equivalence(exact, inst.w_ini, inst.cp).objective);
  }
}

TEST_CASE("deepc on noiseless data reproduces the rollout") {
  std::mt19937_64 gen(5);
  const StochasticLtiModel model = random_stable_model(2, 1, 1, 0.8, 0.0, 0.0, gen);
  const int l_ini = 3, l_f = 4;
  const DataMatrix w = noiseless_data(model, l_ini, l_f, 120, 6);
  ControlProblem cp = ControlProblem::make(model.dims(), l_ini, l_f, 1.0, 0.1);
  cp.y_ref.setConstant(1.0);
  const Simulation past = simulate(model, Vector(Vector::Constant(2, 0.4)), Matrix(Matrix::Constant(1, l_ini, 0.2)), l_ini, 1);
  const Vector w_ini = past.trajectory.window(0, l_ini);
  for (Regularizer reg : {Regularizer::Proj2, Regularizer::Sq2}) {
    const ControlResult r = deepc(w, w_ini, cp, reg, 0.0);
    REQUIRE(r.g.has_value());
    // Continue the plant from the state left by the initial window.
    Matrix u(1, l_f);
    u.row(0) = r.u_f.transpose();
    const Simulation fut = simulate(model, Vector(past.states.col(l_ini)), u, l_f, 1);
    const Vector y_true = fut.trajectory.outputs().transpose();
    CHECK(inf_norm(r.y_pred.mean - y_true) < 1e-6);
    const ControlResult s = spc(predictive_model(w), w_ini, cp);
    CHECK(inf_norm(r.u_f - s.u_f) < 1e-6);
  }
}

TEST_CASE("deepc proj2: homogeneous part vanishes and large lambda_g recovers spc") {
  std::mt19937_64 gen(6);
  for (int k = 0; k < 10; ++k) {
    ControlInstance inst = random_instance(gen, {});
    const ControlResult r = deepc(inst.data, inst.w_ini, inst.cp, Regularizer::Proj2, 1.0);
    const Matrix& raw = inst.data.raw();
    const Vector g = *r.g;
    const Vector hom = g - pinv(raw) * (raw * g);
    CHECK(hom.norm() <= 1e-6 * (1.0 + g.norm()));

    const ControlResult big = deepc(inst.data, inst.w_ini, inst.cp, Regularizer::Proj2, 1e10);
    const ControlResult s = spc(inst.pm, inst.w_ini, inst.cp);
    CHECK(inf_norm(big.u_f - s.u_f) <= 1e-4);
  }
}

TEST_CASE("deepc l1 satisfies the data consistency constraint") {
  std::mt19937_64 gen(7);
  ControlInstance inst = random_instance(gen, {});
  const ControlResult r = deepc(inst.data, inst.w_ini, inst.cp, Regularizer::L1, 0.5);
  const Vector g = *r.g;
  const DataMatrix& w = inst.data;
  CHECK(inf_norm(w.past() * g - inst.w_ini) < 1e-5);
  CHECK(inf_norm(w.future_inputs() * g - r.u_f) < 1e-5);
  CHECK_THROWS(deepc(inst.data, inst.w_ini, inst.cp, Regularizer::Proj2, -1.0));
}

TEST_CASE("optimistic matches the joint stationarity oracle and deepc") {
  std::mt19937_64 gen(8);
  for (int k = 0; k < 20; ++k) {
    ControlInstance inst = random_instance(gen, {});
    const double lambda = 0.3 + 0.1 * k;
    const ControlResult r = optimistic(inst.pm, inst.w_ini, inst.cp, lambda);
    const auto [u, mu] = optimistic_oracle(inst.pm, inst.w_ini, inst.cp, lambda);
    CHECK(inf_norm(r.u_f - u) <= 1e-6 * (1.0 + inf_norm(u)));
    CHECK(inf_norm(r.y_pred.mean - mu) <= 1e-6 * (1.0 + inf_norm(mu)));

    const double lambda_g = 0.7;
    const double d = static_cast<double>(inst.data.cols());
    const ControlResult dp = deepc(inst.data, inst.w_ini, inst.cp, Regularizer::Proj2, lambda_g);
    const ControlResult op = optimistic(inst.pm, inst.w_ini, inst.cp, 2.0 * lambda_g / d);
    CHECK(inf_norm(dp.u_f - op.u_f) <= 1e-5);
    CHECK(inf_norm(inst.data.future_outputs() * *dp.g - op.y_pred.mean) <= 1e-5);
  }
}

TEST_CASE("optimistic with Q = 0 keeps the nominal mean") {
  std::mt19937_64 gen(9);
  ControlInstance inst = random_instance(gen, {});
  inst.cp.q.setZero();
  const ControlResult r = optimistic(inst.pm, inst.w_ini, inst.cp, 1.0);
  CHECK(inf_norm(r.u_f - inst.cp.u_ref) < 1e-8);
  CHECK(inf_norm(r.y_pred.mean - inst.pm.mean(inst.w_ini, r.u_f)) < 1e-8);
}

TEST_CASE("large multipliers recover certainty equivalence") {
  std::mt19937_64 gen(10);
  for (int k = 0; k < 10; ++k) {
    ControlInstance inst = random_instance(gen, {});
    const Vector ce = certainty_equivalence(inst.pm, inst.w_ini, inst.cp).u_f;
    CHECK(inf_norm(optimistic(inst.pm, inst.w_ini, inst.cp, 1e10).u_f - ce) <= 1e-4);
    CHECK(inf_norm(robust(inst.pm, inst.w_ini, inst.cp, 1e10).u_f - ce) <= 1e-4);
  }
}

TEST_CASE("robust: thresholds, errors and the explicit objective") {
  std::mt19937_64 gen(11);
  for (int k = 0; k < 10; ++k) {
    ControlInstance inst = random_instance(gen, {});
    const LambdaThreshold th = lambda_threshold(inst.pm, inst.cp);
    CHECK(th.lambda_psd >= th.lambda0);
    CHECK(hessian(inst.pm, inst.cp, th.lambda_psd).psd);
    if (th.lambda_psd > th.lambda0 * (1.0 + 1e-3)) {
      CHECK_FALSE(hessian(inst.pm, inst.cp, 0.99 * th.lambda_psd).psd);
    }
    CHECK_THROWS_AS(robust(inst.pm, inst.w_ini, inst.cp, 0.5 * th.lambda0), LambdaTooSmall);

    const double lambda = 2.0 * th.lambda_psd + 1.0;
    const ControlResult r = robust(inst.pm, inst.w_ini, inst.cp, lambda);
    CHECK(r.objective == doctest::Approx(robust_objective_explicit(inst.pm, inst.w_ini, inst.cp, lambda, r.u_f)).epsilon(1e-7));
    const RobustCertificate cert = robust_certificate(inst.pm, inst.w_ini, inst.cp, lambda, r.u_f);
    CHECK(inf_norm(r.y_pred.mean - cert.mu_star) < 1e-8 * (1.0 + inf_norm(cert.mu_star)));
    CHECK(cert.stationarity <= 1e-7 * (1.0 + inf_norm(cert.mu_star)));

    ControlProblem boxed = inst.cp;
    boxed.y_box = Box::unbounded(inst.cp.y_ref.size());
    CHECK_THROWS_AS(robust(inst.pm, inst.w_ini, boxed, lambda), ConfigError);
  }
}

TEST_CASE("robust sampled KL-ball bound") {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    ControlInstance inst = random_instance(gen, {});
    const LambdaThreshold th = lambda_threshold(inst.pm, inst.cp);
    const double lambda = 2.0 * th.lambda_psd + 0.5;
    const Vector u = robust(inst.pm, inst.w_ini, inst.cp, lambda).u_f;
    const RobustCertificate cert = robust_certificate(inst.pm, inst.w_ini, inst.cp, lambda, u);
    const double eps = cert.kl;
    const double bound = robust_dual_value(inst.pm, inst.w_ini, inst.cp, lambda, u, eps);
    const Matrix g = inst.pm.cov.llt().matrixL();
    double worst = -1e300;
    for (int s = 0; s < 1000; ++s) {
      Vector z(g.rows());
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd(gen);
      // Mahalanobis radius r has KL = r^2 / 2; pick r uniformly in the ball.
      const double radius = std::sqrt(2.0 * eps) * ud(gen);
      const Vector mu = cert.mu_hat + g * (z.normalized() * radius);
      worst = std::max(worst, expected_cost(inst.pm, inst.cp, u, mu));
    }
    CHECK(worst <= bound + 1e-6 * (1.0 + std::abs(bound)));
    CHECK(expected_cost(inst.pm, inst.cp, u, cert.mu_star) == doctest::Approx(bound).epsilon(1e-7));
  }
}

TEST_CASE("Hessian closed forms") {
  const PredictiveModel pm = scalar_model(1.5, 2.0);
  ControlProblem cp = ControlProblem::make({1, 1}, 1, 1, 3.0, 0.4);
  const LambdaThreshold th = lambda_threshold(pm, cp);
  CHECK(th.lambda0 == doctest::Approx(6.0 * (1.0 + 1e-6)).epsilon(1e-12));

  // Scalar: H = l^2 m^2 s^2 / (l s - q) - l m^2 s + r, s = 1/cov.
  const double l = 20.0, s = 0.5, m = 1.5, q = 3.0, r = 0.4;
  const double expect = l * l * m * m * s * s / (l * s - q) - l * m * m * s + r;
  CHECK(hessian(pm, cp, l).h(0, 0) == doctest::Approx(expect));

  ControlProblem zero_q = ControlProblem::make({1, 1}, 1, 1, 0.0, 0.4);
  CHECK(hessian(pm, zero_q, 5.0).h(0, 0) == doctest::Approx(0.4));
  CHECK(lambda_threshold(pm, zero_q).lambda0 == 0.0);

  // The large-lambda limit is R + M^T Q M.
  CHECK(hessian(pm, cp, 1e10).h(0, 0) == doctest::Approx(r + m * m * q).epsilon(1e-6));
}

TEST_CASE("Hessian matches finite differences of the robust cost") {
  std::mt19937_64 gen(13);
  for (int k = 0; k < 5; ++k) {
    ControlInstance inst = random_instance(gen, {});
    const double lambda = 2.0 * lambda_threshold(inst.pm, inst.cp).lambda_psd + 1.0;
    const Matrix h = hessian(inst.pm, inst.cp, lambda).h;
    const Eigen::Index n = h.rows();
    const double step = 1e-2;
    const Vector u0 = inst.cp.u_ref;
    auto f = [&](const Vector& u) { return robust_objective_explicit(inst.pm, inst.w_ini, inst.cp, lambda, u); };
    Matrix fd(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const Vector ei = Vector::Unit(n, i) * step, ej = Vector::Unit(n, j) * step;
        fd(i, j) = (f(u0 + ei + ej) - f(u0 + ei - ej) - f(u0 - ei + ej) + f(u0 - ei - ej)) / (4 * step * step);
      }
    }
    CHECK((fd - 2.0 * h).norm() <= 1e-4 * (2.0 * h).norm());
  }
}

TEST_CASE("every controller respects the input box") {
  std::mt19937_64 gen(14);
  InstanceOptions opt;
  opt.input_box = true;
  for (int k = 0; k < 10; ++k) {
    ControlInstance inst = random_instance(gen, opt);
    const double lambda = 2.0 * lambda_threshold(inst.pm, inst.cp).lambda_psd + 1.0;
    const std::vector<ControlResult> rs{
        spc(inst.pm, inst.w_ini, inst.cp), certainty_equivalence(inst.pm, inst.w_ini, inst.cp),
        deepc(inst.data, inst.w_ini, inst.cp, Regularizer::Proj2, 1.0),
        deepc(inst.data, inst.w_ini, inst.cp, Regularizer::L1, 1.0),
        optimistic(inst.pm, inst.w_ini, inst.cp, 1.0), robust(inst.pm, inst.w_ini, inst.cp, lambda)};
    for (const ControlResult& r : rs) {
      CHECK((r.u_f.array() >= inst.cp.u_box.lower.array() - 1e-6).all());
      CHECK((r.u_f.array() <= inst.cp.u_box.upper.array() + 1e-6).all());
    }
  }
}

TEST_CASE("infeasible bounds are reported") {
  std::mt19937_64 gen(15);
  ControlInstance inst = random_instance(gen, {});
  ControlProblem cp = inst.cp;
  const Eigen::Index np = cp.y_ref.size();
  // Output forced far outside anything a zero-width input box can reach.
  cp.u_box = Box::repeat(Vector::Zero(cp.dims.m), Vector::Zero(cp.dims.m), cp.l_f);
  const Vector y0 = inst.pm.mean(inst.w_ini, Vector::Zero(cp.u_ref.size()));
  cp.y_box = Box{y0.array() + 1.0, y0.array() + 2.0};
  CHECK(np == y0.size());
  CHECK_THROWS_AS(spc(inst.pm, inst.w_ini, cp), Infeasible);
}
