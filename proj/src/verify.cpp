#include "gbc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "gbc/controllers.hpp"
#include "gbc/errors.hpp"
#include "gbc/gaussian_behavior.hpp"
#include "gbc/instances.hpp"
#include "gbc/lti_plant.hpp"
#include "gbc/trajectory_data.hpp"

namespace gbc {

namespace {

using Results = std::vector<CheckResult>;

Matrix random_matrix(std::mt19937_64& gen, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) a(i, j) = normal(gen);
  }
  return a;
}

Vector random_vector(std::mt19937_64& gen, Eigen::Index n) { return random_matrix(gen, n, 1); }

Matrix random_spd(std::mt19937_64& gen, Eigen::Index n) {
  const Matrix a = random_matrix(gen, n, n);
  return a * a.transpose() + 0.5 * Matrix::Identity(n, n);
}

// Runs `body`, turning library errors into a failed check.
void run_check(Results& out, const std::string& suite, const std::string& name, double tolerance,
               const std::function<double(std::string&)>& body) {
  CheckResult r;
  r.suite = suite;
  r.name = name;
  r.tolerance = tolerance;
  try {
    r.value = body(r.detail);
    r.passed = std::isfinite(r.value) && r.value <= tolerance;
  } catch (const std::exception& e) {
    r.value = std::numeric_limits<double>::infinity();
    r.detail = std::string("error: ") + e.what();
    r.passed = false;
  }
  out.push_back(std::move(r));
}

InstanceOptions theorem_options(bool box) {
  InstanceOptions o;
  o.input_box = box;
  return o;
}

void lemma_suite(const VerifyOptions& opt, Results& out) {
  const std::string suite = "lemmas";
  std::mt19937_64 gen(opt.seed ^ 0x1e11a5ULL);

  run_check(out, suite, "sample_covariance_is_local_mle", 0.0, [&](std::string& detail) {
    double worst = -std::numeric_limits<double>::infinity();
    for (int set = 0; set < 3; ++set) {
      const Eigen::Index k = 2 + static_cast<Eigen::Index>(gen() % 7);
      const Matrix truth = random_spd(gen, k);
      const Matrix samples = sample_gaussian(Vector::Zero(k), truth, 200, gen());
      const GaussianBehavior hat = estimate(samples, {1, static_cast<int>(k) - 1}, 1);
      const double base = log_likelihood(hat, samples);
      const double lmin = sym_eig(hat.cov).values(k - 1);
      for (int dir = 0; dir < 100; ++dir) {
        Matrix e = random_matrix(gen, k, k);
        e = symmetrize(e);
        e /= e.norm();
        const double t = (dir % 2 ? 0.05 : -0.05) * lmin;
        GaussianBehavior pert = hat;
        pert.cov = hat.cov + t * e;
        worst = std::max(worst, log_likelihood(pert, samples) - base);
      }
    }
    std::ostringstream msg;
    msg << "largest log-likelihood change under 300 PD perturbations: " << worst;
    detail = msg.str();
    return worst < 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  });

  run_check(out, suite, "predictive_model_equals_conditioning", 1e-8, [&](std::string& detail) {
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
      std::mt19937_64 g(gen());
      InstanceOptions o;
      o.max_l_f = 3;
      o.min_cols_factor = 2.0;
      const ControlInstance inst = random_instance(g, o);
      const DataMatrix& w = inst.data;
      const GaussianBehavior gb = estimate(w, false);
      const Eigen::Index nf = w.free_rows();
      std::vector<Eigen::Index> free(w.row_index().begin(), w.row_index().begin() + nf);
      const Vector u_f = random_vector(g, w.future_input_rows());
      Vector value(nf);
      value << inst.w_ini, u_f;
      const ConditionalGaussian cg = condition(gb, free, value, opt.rank_tol);
      const Vector mean = inst.pm.mean(inst.w_ini, u_f);
      const double scale = 1.0 + mean.cwiseAbs().maxCoeff() + inst.pm.cov.cwiseAbs().maxCoeff();
      worst = std::max(worst, (cg.mean - mean).cwiseAbs().maxCoeff() / scale);
      worst = std::max(worst, (cg.cov - inst.pm.cov).cwiseAbs().maxCoeff() / scale);
    }
    detail = "relative deviation of (mean, cov) over 5 data sets";
    return worst;
  });

  run_check(out, suite, "state_space_covariance_monte_carlo", 0.05, [&](std::string& detail) {
    std::mt19937_64 g(gen());
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(g() % 3);
    const Eigen::Index len = 2 + static_cast<Eigen::Index>(g() % 3);
    const StochasticLtiModel model = random_stable_model(n, 1, 1, 0.8, 0.3, 0.3, g);
    const Matrix sx = stationary_state_cov(model, 1.0);
    const Eigen::Index windows = 100000;
    const Simulation sim = simulate(model, GaussianState{Vector::Zero(n), sx}, WhiteInput{1.0},
                                   windows * len, g());
    const Matrix w = window_trajectory(sim.trajectory, len, WindowMode::Disjoint);
    const Matrix emp = w * w.transpose() / static_cast<double>(w.cols());
    const GaussianBehavior gb =
        from_state_space(model, len, sx, Vector::Zero(n), Matrix::Identity(len, len),
                         Vector::Zero(len))
            .interleaved();
    detail = "relative Frobenius error, 1e5 windows";
    return (emp - gb.cov).norm() / gb.cov.norm();
  });

  run_check(out, suite, "conditioning_regression", 3.0, [&](std::string& detail) {
    std::mt19937_64 g(gen());
    const Eigen::Index k = 4;
    const Matrix sigma = random_spd(g, k);
    const Eigen::Index n = 200000;
    const Matrix s = sample_gaussian(Vector::Zero(k), sigma, n, g());
    // Regress rows {2, 3} on rows {0, 1}.
    const Matrix xf = s.topRows(2);
    const Matrix yd = s.bottomRows(2);
    const Matrix xtx = xf * xf.transpose();
    const Matrix beta = yd * xf.transpose() * xtx.inverse();
    const Matrix resid = yd - beta * xf;
    const Matrix rcov = resid * resid.transpose() / static_cast<double>(n - 2);
    GaussianBehavior gb{{1, 3}, 1, Vector::Zero(k), sigma, Ordering::Interleaved};
    const std::vector<Eigen::Index> free{0, 1};
    const Vector probe = Vector::Ones(2);
    const ConditionalGaussian cg = condition(gb, free, probe);
    // Standard error of the predicted mean at `probe`.
    double worst = 0.0;
    const Vector pred = beta * probe;
    const double lev = probe.dot(xtx.inverse() * probe);
    for (Eigen::Index i = 0; i < 2; ++i) {
      const double se = std::sqrt(rcov(i, i) * lev);
      worst = std::max(worst, std::abs(pred(i) - cg.mean(i)) / se);
    }
    const double cov_err = (rcov - cg.cov).norm() / cg.cov.norm();
    detail = "max |mean error| in standard errors; covariance error " + std::to_string(cov_err);
    return cov_err <= 0.05 ? worst : std::numeric_limits<double>::infinity();
  });

  run_check(out, suite, "deterministic_free_block", 0.0, [&](std::string& detail) {
    GaussianBehavior gb{{1, 1}, 1, Vector(2), Matrix::Zero(2, 2), Ordering::Interleaved};
    gb.mean << 0.3, -1.7;
    gb.cov(1, 1) = 2.0;
    const std::vector<Eigen::Index> free{0};
    const ConditionalGaussian cg = condition(gb, free, Vector::Constant(1, 5.0));
    detail = "|mu_pred - mu_dep| with zero free covariance";
    return std::abs(cg.mean(0) - gb.mean(1));
  });

  run_check(out, suite, "noiseless_rank", 0.0, [&](std::string& detail) {
    std::mt19937_64 g(gen());
    const StochasticLtiModel model = random_stable_model(3, 1, 1, 0.8, 0.0, 0.0, g);
    const int l_ini = 3;
    const int l_f = 4;
    const DataMatrix w = noiseless_data(model, l_ini, l_f, 200, g());
    const Eigen::Index expected = (l_ini + l_f) + model.n();
    const ExcitationRank r = excitation_rank(w, expected, 1e-8);
    detail = "rank " + std::to_string(r.rank) + ", expected " + std::to_string(expected);
    return static_cast<double>(std::abs(r.rank - expected));
  });
}

void theorem_suite(const VerifyOptions& opt, Results& out) {
  const std::string suite = "theorems";
  std::mt19937_64 gen(opt.seed ^ 0x7e0cULL);
  auto configure = [&](ControlInstance& inst) {
    inst.cp.solver = opt.solver;
    inst.cp.rank_tol = opt.rank_tol;
    inst.cp.jitter_scale = opt.jitter_scale;
  };

  run_check(out, suite, "spc_equals_certainty_equivalence", 1e-8, [&](std::string& detail) {
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      ControlInstance inst = random_instance(gen, theorem_options(k % 2 == 0));
      configure(inst);
      const ControlResult a = spc(inst.pm, inst.w_ini, inst.cp);
      const ControlResult b = certainty_equivalence(inst.pm, inst.w_ini, inst.cp);
      const double trace = (inst.cp.q * inst.pm.cov).trace();
      worst = std::max(worst, (a.u_f - b.u_f).cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(b.objective - a.objective - trace) /
                                  std::max(1.0, std::abs(b.objective)));
    }
    detail = "input gap and objective-minus-trace gap over 20 instances";
    return worst;
  });

  run_check(out, suite, "deepc_equals_optimistic", 1e-5, [&](std::string& detail) {
    double worst = 0.0;
    double hom = 0.0;
    int perturbed = 0;
    for (int k = 0; k < 20; ++k) {
      ControlInstance inst = random_instance(gen, theorem_options(k % 2 == 0));
      configure(inst);
      const double lambda_g = std::pow(10.0, -2.0 + 0.25 * (k % 13));
      const ControlResult d = deepc(inst.data, inst.w_ini, inst.cp, Regularizer::Proj2, lambda_g);
      PredictiveModel pm = inst.pm;
      if (opt.inject_bug && pm.cov.rows() >= 2) {
        pm.cov(0, 1) = -pm.cov(0, 1);
        pm.cov(1, 0) = -pm.cov(1, 0);
        ++perturbed;
      }
      const double lambda = 2.0 * lambda_g / static_cast<double>(inst.data.cols());
      const ControlResult o = optimistic(pm, inst.w_ini, inst.cp, lambda);
      worst = std::max(worst, (d.u_f - o.u_f).cwiseAbs().maxCoeff());
      worst = std::max(worst, (d.y_pred.mean - o.y_pred.mean).cwiseAbs().maxCoeff());
      const Matrix& raw = inst.data.raw();
      const Matrix proj = pinv(raw, opt.rank_tol) * raw;
      hom = std::max(hom, (*d.g - proj * *d.g).norm());
    }
    std::ostringstream msg;
    msg << "max gap in (u, mu) over 20 instances; homogeneous part of g " << hom;
    if (opt.inject_bug) msg << "; injected bug in " << perturbed << " instances";
    detail = msg.str();
    return hom <= 1e-6 ? worst : std::numeric_limits<double>::infinity();
  });

  run_check(out, suite, "robust_sampled_bound", 1e-6, [&](std::string& detail) {
    double worst = -std::numeric_limits<double>::infinity();
    double stationarity = 0.0;
    for (int k = 0; k < 10; ++k) {
      ControlInstance inst = random_instance(gen, theorem_options(k % 2 == 0));
      configure(inst);
      const double lambda = (1.5 + k) * lambda_threshold(inst.pm, inst.cp).lambda_psd + 1e-3;
      const ControlResult r = robust(inst.pm, inst.w_ini, inst.cp, lambda);
      const RobustCertificate cert = robust_certificate(inst.pm, inst.w_ini, inst.cp, lambda, r.u_f);
      const double scale = std::max(1.0, std::abs(cert.bound));
      stationarity = std::max(stationarity, cert.stationarity / scale);
      const Matrix g = factor_with_jitter(inst.pm.cov, "verify", opt.jitter_scale).lower;
      const Eigen::Index dim = g.rows();
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (int s = 0; s < 500; ++s) {
        Vector z = random_vector(gen, dim);
        z.normalize();
        // Radius^2 / 2 = KL; half the samples sit on the boundary.
        const double radius = std::sqrt(2.0 * cert.kl) * (s % 2 ? 1.0 : std::pow(unit(gen), 1.0 / dim));
        const Vector mu = cert.mu_hat + g * (radius * z);
        const double cost = expected_cost(inst.pm, inst.cp, r.u_f, mu);
        worst = std::max(worst, (cost - cert.bound) / scale);
      }
    }
    std::ostringstream msg;
    msg << "max sampled excess over the dual value (10 x 500); stationarity " << stationarity;
    detail = msg.str();
    return stationarity <= 1e-6 ? std::max(worst, 0.0) : std::numeric_limits<double>::infinity();
  });

  run_check(out, suite, "large_lambda_recovers_certainty_equivalence", 1e-4, [&](std::string& detail) {
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
      ControlInstance inst = random_instance(gen, theorem_options(k % 2 == 0));
      configure(inst);
      const ControlResult ce = certainty_equivalence(inst.pm, inst.w_ini, inst.cp);
      const ControlResult o = optimistic(inst.pm, inst.w_ini, inst.cp, 1e10);
      const ControlResult r = robust(inst.pm, inst.w_ini, inst.cp, 1e10);
      worst = std::max(worst, (o.u_f - ce.u_f).cwiseAbs().maxCoeff());
      worst = std::max(worst, (r.u_f - ce.u_f).cwiseAbs().maxCoeff());
    }
    detail = "optimistic and robust at lambda = 1e10 against certainty equivalence";
    return worst;
  });

  std::mt19937_64 hgen(gen());
  ControlInstance inst = random_instance(hgen, theorem_options(false));
  configure(inst);
  const Matrix limit = inst.cp.r + inst.pm.m_u.transpose() * inst.cp.q * inst.pm.m_u;

  run_check(out, suite, "hessian_large_lambda_limit", 1e-6, [&](std::string& detail) {
    const Matrix h = hessian(inst.pm, inst.cp, 1e10).h;
    detail = "|H(1e10) - (R + M_u^T Q M_u)|_F / |R + M_u^T Q M_u|_F";
    return (h - limit).norm() / limit.norm();
  });

  {
    CheckResult info;
    info.suite = suite;
    info.name = "hessian_distance_to_r";
    info.informational = true;
    info.passed = true;
    try {
      const Matrix h = hessian(inst.pm, inst.cp, 1e10).h;
      info.value = (h - inst.cp.r).norm() / inst.cp.r.norm();
      info.detail = "|H(1e10) - R|_F / |R|_F; nonzero because H tends to R + M_u^T Q M_u";
    } catch (const std::exception& e) {
      info.detail = e.what();
    }
    out.push_back(info);
  }

  run_check(out, suite, "hessian_zero_q", 1e-12, [&](std::string& detail) {
    ControlProblem cp = inst.cp;
    cp.q.setZero();
    const Matrix h = hessian(inst.pm, cp, 3.7).h;
    detail = "|H - R|_F / |R|_F with Q = 0";
    return (h - cp.r).norm() / cp.r.norm();
  });

  run_check(out, suite, "hessian_finite_difference", 1e-4, [&](std::string& detail) {
    const double lambda = 3.0 * lambda_threshold(inst.pm, inst.cp).lambda_psd + 1e-2;
    const Matrix h = hessian(inst.pm, inst.cp, lambda).h;
    const Eigen::Index n = h.rows();
    const Vector u0 = random_vector(hgen, n);
    const double step = 1e-2;
    auto f = [&](const Vector& u) {
      return robust_objective_explicit(inst.pm, inst.w_ini, inst.cp, lambda, u);
    };
    Matrix fd(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        Vector a = u0, b = u0, c = u0, d = u0;
        a(i) += step; a(j) += step;
        b(i) += step; b(j) -= step;
        c(i) -= step; c(j) += step;
        d(i) -= step; d(j) -= step;
        fd(i, j) = (f(a) - f(b) - f(c) + f(d)) / (4.0 * step * step);
      }
    }
    detail = "central-difference Hessian of the robust cost against 2 H(lambda)";
    return (fd - 2.0 * h).norm() / (2.0 * h).norm();
  });

  run_check(out, suite, "lambda_threshold", 1e-12, [&](std::string& detail) {
    PredictiveModel pm;
    pm.dims = {1, 1};
    pm.l_ini = 1;
    pm.l_f = 1;
    pm.m_u = Matrix::Ones(1, 1);
    pm.m_ini = Matrix::Zero(1, 2);
    pm.cov = Matrix::Constant(1, 1, 2.0);
    ControlProblem cp = ControlProblem::make({1, 1}, 1, 1, 3.0, 1.0);
    const LambdaThreshold t = lambda_threshold(pm, cp);
    const LambdaThreshold ti = lambda_threshold(inst.pm, inst.cp);
    const bool psd = hessian(inst.pm, inst.cp, ti.lambda_psd).psd;
    detail = "scalar lambda0 against 6 (1 + 1e-6); H(lambda_psd) PSD on a random instance";
    return psd ? std::abs(t.lambda0 - 6.0 * (1.0 + 1e-6)) / 6.0 : std::numeric_limits<double>::infinity();
  });
}

void solver_suite(const VerifyOptions& opt, Results& out) {
  const std::string suite = "solver";
  std::mt19937_64 gen(opt.seed ^ 0x50abULL);

  run_check(out, suite, "equality_kkt_oracle", 1e-6, [&](std::string& detail) {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Eigen::Index n = 10;
      const Eigen::Index me = 3;
      QpProblem prob = QpProblem::unconstrained(random_spd(gen, n), random_vector(gen, n));
      prob.a_eq = random_matrix(gen, me, n);
      prob.b_eq = random_vector(gen, me);
      const QpSolution sol = solve(prob, opt.solver);
      Matrix kkt = Matrix::Zero(n + me, n + me);
      kkt.topLeftCorner(n, n) = prob.p;
      kkt.topRightCorner(n, me) = prob.a_eq.transpose();
      kkt.bottomLeftCorner(me, n) = prob.a_eq;
      Vector rhs(n + me);
      rhs << -prob.q, prob.b_eq;
      const Vector x = kkt.fullPivLu().solve(rhs).head(n);
      worst = std::max(worst, (sol.x - x).cwiseAbs().maxCoeff());
    }
    detail = "max |x - x_kkt| over 100 instances";
    return worst;
  });

  run_check(out, suite, "l1_soft_threshold", 1e-6, [&](std::string& detail) {
    const QpProblem prob = QpProblem::unconstrained(Matrix::Identity(1, 1), Vector::Constant(1, -3.0));
    const std::vector<Eigen::Index> sel{0};
    const QpSolution sol = solve(l1_epigraph(prob, 1.0, sel), opt.solver);
    detail = "argmin of (x - 3)^2 / 2 + |x| against 2";
    return std::abs(sol.x(0) - 2.0);
  });

  run_check(out, suite, "box_kkt_and_scaling", 1e-5, [&](std::string& detail) {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const Eigen::Index n = 8;
      QpProblem prob = QpProblem::unconstrained(random_spd(gen, n), 5.0 * random_vector(gen, n));
      prob.a_eq = random_matrix(gen, 2, n);
      prob.b_eq = 0.1 * random_vector(gen, 2);
      prob.lower.setConstant(-0.4);
      prob.upper.setConstant(0.4);
      const QpSolution a = solve(prob, opt.solver);
      if (a.status != QpStatus::Optimal) return std::numeric_limits<double>::infinity();
      const Vector grad = prob.p * a.x + prob.q + prob.a_eq.transpose() * a.y_eq + a.y_bound;
      const double scale = 1.0 + prob.q.cwiseAbs().maxCoeff();
      worst = std::max(worst, grad.cwiseAbs().maxCoeff() / scale);
      QpProblem scaled = prob;
      scaled.p *= 37.0;
      scaled.q *= 37.0;
      const QpSolution b = solve(scaled, opt.solver);
      worst = std::max(worst, (a.x - b.x).cwiseAbs().maxCoeff());
    }
    detail = "KKT stationarity with recovered multipliers and argmin gap under cost scaling";
    return worst;
  });
}

}  // namespace

std::vector<CheckResult> verify(const VerifyOptions& options) {
  const std::string& s = options.suite;
  if (s != "all" && s != "lemmas" && s != "theorems" && s != "solver") {
    throw ConfigError("verify: unknown suite '" + s + "' (expected all, lemmas, theorems or solver)");
  }
  Results out;
  if (s == "all" || s == "lemmas") lemma_suite(options, out);
  if (s == "all" || s == "theorems") theorem_suite(options, out);
  if (s == "all" || s == "solver") solver_suite(options, out);
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const CheckResult& r) { return r.informational || r.passed; });
}

void print_report(const std::vector<CheckResult>& results, std::ostream& out) {
  for (const CheckResult& r : results) {
    const char* status = r.informational ? "INFO" : (r.passed ? "PASS" : "FAIL");
    out << status << ' ' << r.suite << '/' << r.name << ' ' << std::setprecision(3)
        << std::scientific << r.value;
    if (!r.informational) out << " <= " << r.tolerance;
    out << std::defaultfloat;
    if (!r.detail.empty()) out << "  (" << r.detail << ')';
    out << '\n';
  }
}

nlohmann::json report_json(const std::vector<CheckResult>& results) {
  nlohmann::json checks = nlohmann::json::array();
  for (const CheckResult& r : results) {
    nlohmann::json value = std::isfinite(r.value) ? nlohmann::json(r.value) : nlohmann::json(nullptr);
    checks.push_back({{"suite", r.suite},
                      {"name", r.name},
                      {"status", r.informational ? "info" : (r.passed ? "pass" : "fail")},
                      {"value", value},
                      {"tolerance", r.tolerance},
                      {"detail", r.detail}});
  }
  return {{"schema", 1}, {"passed", all_passed(results)}, {"checks", std::move(checks)}};
}

}  // namespace gbc
