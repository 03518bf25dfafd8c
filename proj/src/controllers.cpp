#include "gbc/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gbc/errors.hpp"
#include "gbc/log.hpp"

namespace gbc {

Box Box::unbounded(Eigen::Index n) {
  return {Vector::Constant(n, -kInfinity), Vector::Constant(n, kInfinity)};
}

Box Box::repeat(const Eigen::Ref<const Vector>& step_lower, const Eigen::Ref<const Vector>& step_upper,
                Eigen::Index steps) {
  if (step_lower.size() != step_upper.size()) throw ShapeError("Box::repeat: bound sizes differ");
  return {step_lower.replicate(steps, 1), step_upper.replicate(steps, 1)};
}

ControlProblem ControlProblem::make(SignalDims dims, int l_ini, int l_f, double q_weight,
                                    double r_weight) {
  ControlProblem cp;
  cp.dims = dims;
  cp.l_ini = l_ini;
  cp.l_f = l_f;
  const Eigen::Index nu = Eigen::Index{dims.m} * l_f;
  const Eigen::Index ny = Eigen::Index{dims.p} * l_f;
  cp.q = q_weight * Matrix::Identity(ny, ny);
  cp.r = r_weight * Matrix::Identity(nu, nu);
  cp.u_ref = Vector::Zero(nu);
  cp.y_ref = Vector::Zero(ny);
  cp.u_box = Box::unbounded(nu);
  return cp;
}

void ControlProblem::validate() const {
  dims.validate();
  if (l_ini < 1 || l_f < 1) throw ConfigError("ControlProblem: horizons must be >= 1");
  const Eigen::Index nu = Eigen::Index{dims.m} * l_f;
  const Eigen::Index ny = Eigen::Index{dims.p} * l_f;
  if (q.rows() != ny || q.cols() != ny) throw ShapeError("ControlProblem: Q must be pL_f x pL_f");
  if (r.rows() != nu || r.cols() != nu) throw ShapeError("ControlProblem: R must be mL_f x mL_f");
  if (u_ref.size() != nu) throw ShapeError("ControlProblem: u_ref must have mL_f entries");
  if (y_ref.size() != ny) throw ShapeError("ControlProblem: y_ref must have pL_f entries");
  if (u_box.lower.size() != nu || u_box.upper.size() != nu) {
    throw ShapeError("ControlProblem: u_box must have mL_f entries");
  }
  if (y_box && (y_box->lower.size() != ny || y_box->upper.size() != ny)) {
    throw ShapeError("ControlProblem: y_box must have pL_f entries");
  }
  require_finite(q, "ControlProblem Q");
  require_finite(r, "ControlProblem R");
  require_finite(u_ref, "ControlProblem u_ref");
  require_finite(y_ref, "ControlProblem y_ref");
  if ((u_box.lower.array() > u_box.upper.array()).any()) {
    throw ConfigError("ControlProblem: u_box lower > upper");
  }
  if (y_box && (y_box->lower.array() > y_box->upper.array()).any()) {
    throw ConfigError("ControlProblem: y_box lower > upper");
  }
  if (!is_psd(q, 1e-10)) throw InvalidMatrix("ControlProblem: Q must be PSD");
  const SymEig er = sym_eig(r);
  if (er.values(er.values.size() - 1) <= 0.0) throw InvalidMatrix("ControlProblem: R must be PD");
}

double ControlProblem::cost(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& y) const {
  const Vector du = u - u_ref;
  const Vector dy = y - y_ref;
  return du.dot(r * du) + dy.dot(q * dy);
}

std::string to_string(Regularizer reg) {
  switch (reg) {
    case Regularizer::Proj2: return "proj2";
    case Regularizer::Sq2: return "sq2";
    case Regularizer::L1: return "l1";
  }
  return "unknown";
}

Regularizer parse_regularizer(const std::string& name) {
  if (name == "proj2") return Regularizer::Proj2;
  if (name == "sq2") return Regularizer::Sq2;
  if (name == "l1") return Regularizer::L1;
  throw ConfigError("unknown regularizer '" + name + "' (expected proj2, sq2 or l1)");
}

namespace {

void check_compatible(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                      const ControlProblem& cp) {
  cp.validate();
  if (!(pm.dims == cp.dims) || pm.l_ini != cp.l_ini || pm.l_f != cp.l_f) {
    throw ShapeError("controller: predictive model and control problem disagree on dimensions");
  }
  if (w_ini.size() != Eigen::Index{cp.dims.q()} * cp.l_ini) {
    throw ShapeError("controller: w_ini must have q L_ini entries");
  }
  require_finite(w_ini, "w_ini");
}

QpSolution run_qp(const QpProblem& problem, const QpSettings& settings, const char* who) {
  QpSolution sol = solve(problem, settings);
  if (sol.status == QpStatus::Infeasible) {
    throw Infeasible(std::string(who) + ": QP is primal infeasible");
  }
  if (sol.status == QpStatus::MaxIter) {
    std::ostringstream msg;
    msg << who << ": QP stopped at max_iter (primal " << sol.primal_residual << ", dual "
        << sol.dual_residual << ")";
    log::warn(msg.str());
  }
  return sol;
}

// Sigma = G G^T and the eigendecomposition of G^T Q G, which diagonalizes
// every (lambda S - Q)-type expression at once.
struct Whitened {
  Matrix g;
  Matrix g_inv;
  Vector d;  ///< eigenvalues of G^T Q G, descending
  Matrix v;
};

Whitened whiten(const PredictiveModel& pm, const ControlProblem& cp, const char* who) {
  Whitened w;
  w.g = factor_with_jitter(pm.cov, who, cp.jitter_scale).lower;
  const Eigen::Index k = w.g.rows();
  w.g_inv = w.g.triangularView<Eigen::Lower>().solve(Matrix::Identity(k, k));
  const SymEig eig = sym_eig(w.g.transpose() * cp.q * w.g);
  w.d = eig.values.cwiseMax(0.0);
  w.v = eig.vectors;
  return w;
}

// G^{-T} V diag(f) V^T G^{-1}
Matrix weighted_metric(const Whitened& w, const Vector& f) {
  const Matrix b = w.v.transpose() * w.g_inv;
  return symmetrize(b.transpose() * f.asDiagonal() * b);
}

// G V diag(f) V^T G^{-1} x
Vector weighted_map(const Whitened& w, const Vector& f, const Vector& x) {
  return w.g * (w.v * f.cwiseProduct(w.v.transpose() * (w.g_inv * x)));
}

Vector robust_kappa(const Whitened& w, double lambda) {
  Vector kappa(w.d.size());
  for (Eigen::Index i = 0; i < w.d.size(); ++i) {
    const double d = w.d(i);
    if (d == 0.0) {
      kappa(i) = 0.0;
      continue;
    }
    if (lambda == d) throw InvalidMatrix("hessian: lambda S - Q is singular");
    kappa(i) = lambda * d / (lambda - d);
  }
  return kappa;
}

double threshold_from(const Whitened& w) {
  const double dmax = w.d.size() > 0 ? w.d(0) : 0.0;
  return dmax > 0.0 ? dmax * (1.0 + 1e-6) : 0.0;
}

// min u^T R u + (M u + c0 - y_ref)^T K (M u + c0 - y_ref) - 2 u_ref^T R u
QpProblem input_qp(const PredictiveModel& pm, const ControlProblem& cp, const Matrix& k,
                   const Vector& c0) {
  QpProblem prob;
  prob.p = 2.0 * symmetrize(cp.r + pm.m_u.transpose() * k * pm.m_u);
  prob.q = 2.0 * (pm.m_u.transpose() * (k * (c0 - cp.y_ref)) - cp.r * cp.u_ref);
  prob.a_eq = Matrix(0, prob.q.size());
  prob.b_eq = Vector(0);
  prob.lower = cp.u_box.lower;
  prob.upper = cp.u_box.upper;
  return prob;
}

ControlResult spc_impl(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                       const ControlProblem& cp, const char* who) {
  check_compatible(pm, w_ini, cp);
  const Vector c0 = pm.m_ini * w_ini;
  ControlResult res;
  if (!cp.y_box) {
    res.solver = run_qp(input_qp(pm, cp, cp.q, c0), cp.solver, who);
    res.u_f = res.solver.x;
    res.y_pred.mean = pm.m_u * res.u_f + c0;
  } else {
    const Eigen::Index nu = pm.m_u.cols();
    const Eigen::Index ny = pm.m_u.rows();
    QpProblem prob;
    prob.p = Matrix::Zero(nu + ny, nu + ny);
    prob.p.topLeftCorner(nu, nu) = 2.0 * cp.r;
    prob.p.bottomRightCorner(ny, ny) = 2.0 * cp.q;
    prob.q.resize(nu + ny);
    prob.q << -2.0 * (cp.r * cp.u_ref), -2.0 * (cp.q * cp.y_ref);
    prob.a_eq.resize(ny, nu + ny);
    prob.a_eq << pm.m_u, -Matrix::Identity(ny, ny);
    prob.b_eq = -c0;
    prob.lower.resize(nu + ny);
    prob.upper.resize(nu + ny);
    prob.lower << cp.u_box.lower, cp.y_box->lower;
    prob.upper << cp.u_box.upper, cp.y_box->upper;
    res.solver = run_qp(prob, cp.solver, who);
    res.u_f = res.solver.x.head(nu);
    res.y_pred.mean = pm.m_u * res.u_f + c0;
  }
  res.y_pred.cov = pm.cov;
  res.objective = cp.cost(res.u_f, res.y_pred.mean);
  return res;
}

}  // namespace

ControlResult spc(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                  const ControlProblem& cp) {
  return spc_impl(pm, w_ini, cp, "spc");
}

ControlResult certainty_equivalence(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                                    const ControlProblem& cp) {
  ControlResult res = spc_impl(pm, w_ini, cp, "certainty_equivalence");
  res.objective += (cp.q * pm.cov).trace();
  return res;
}

ControlResult deepc(const DataMatrix& w, const Eigen::Ref<const Vector>& w_ini,
                    const ControlProblem& cp, Regularizer reg, double lambda_g) {
  cp.validate();
  if (!(w.dims() == cp.dims) || w.l_ini() != cp.l_ini || w.l_f() != cp.l_f) {
    throw ShapeError("deepc: data matrix and control problem disagree on dimensions");
  }
  if (w_ini.size() != w.past_rows()) throw ShapeError("deepc: w_ini must have q L_ini entries");
  if (!(lambda_g >= 0.0) || !std::isfinite(lambda_g)) {
    throw ConfigError("deepc: lambda_g must be finite and >= 0");
  }
  require_finite(w_ini, "w_ini");

  const Eigen::Index dcols = w.cols();
  const Eigen::Index nu = w.future_input_rows();
  const Eigen::Index ny = w.future_output_rows();
  const Eigen::Index np = w.past_rows();
  const Eigen::Index n = dcols + nu + ny;

  const Matrix free = w.free_block();
  const Matrix proj = pinv(free, cp.rank_tol) * free;
  const Matrix complement = symmetrize(Matrix::Identity(dcols, dcols) - proj);

  QpProblem prob;
  prob.p = Matrix::Zero(n, n);
  if (reg == Regularizer::Proj2) prob.p.topLeftCorner(dcols, dcols) = 2.0 * lambda_g * complement;
  if (reg == Regularizer::Sq2) {
    prob.p.topLeftCorner(dcols, dcols) = 2.0 * lambda_g * Matrix::Identity(dcols, dcols);
  }
  prob.p.block(dcols, dcols, nu, nu) = 2.0 * cp.r;
  prob.p.bottomRightCorner(ny, ny) = 2.0 * cp.q;
  prob.q = Vector::Zero(n);
  prob.q.segment(dcols, nu) = -2.0 * (cp.r * cp.u_ref);
  prob.q.tail(ny) = -2.0 * (cp.q * cp.y_ref);

  prob.a_eq = Matrix::Zero(np + nu + ny, n);
  prob.a_eq.topLeftCorner(np + nu + ny, dcols) = w.ordered();
  prob.a_eq.block(np, dcols, nu, nu) = -Matrix::Identity(nu, nu);
  prob.a_eq.block(np + nu, dcols + nu, ny, ny) = -Matrix::Identity(ny, ny);
  prob.b_eq = Vector::Zero(np + nu + ny);
  prob.b_eq.head(np) = w_ini;

  prob.lower = Vector::Constant(n, -kInfinity);
  prob.upper = Vector::Constant(n, kInfinity);
  prob.lower.segment(dcols, nu) = cp.u_box.lower;
  prob.upper.segment(dcols, nu) = cp.u_box.upper;
  if (cp.y_box) {
    prob.lower.tail(ny) = cp.y_box->lower;
    prob.upper.tail(ny) = cp.y_box->upper;
  }

  ControlResult res;
  if (reg == Regularizer::L1) {
    std::vector<Eigen::Index> selector(static_cast<std::size_t>(dcols));
    for (Eigen::Index i = 0; i < dcols; ++i) selector[static_cast<std::size_t>(i)] = i;
    res.solver = run_qp(l1_epigraph(prob, lambda_g, selector), cp.solver, "deepc");
    res.solver.x.conservativeResize(n);
  } else {
    res.solver = run_qp(prob, cp.solver, "deepc");
  }
  const Vector g = res.solver.x.head(dcols);
  res.u_f = res.solver.x.segment(dcols, nu);
  res.y_pred.mean = res.solver.x.tail(ny);
  const auto yf = w.future_outputs();
  res.y_pred.cov = symmetrize(yf * complement * yf.transpose() / static_cast<double>(dcols));

  double h = 0.0;
  switch (reg) {
    case Regularizer::Proj2: h = (complement * g).squaredNorm(); break;
    case Regularizer::Sq2: h = g.squaredNorm(); break;
    case Regularizer::L1: h = g.lpNorm<1>(); break;
  }
  res.objective = cp.cost(res.u_f, res.y_pred.mean) + lambda_g * h;
  res.g = g;
  res.lambda_effective = lambda_g;
  return res;
}

ControlResult optimistic(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                         const ControlProblem& cp, double lambda) {
  check_compatible(pm, w_ini, cp);
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("optimistic: lambda must be finite and > 0");
  }
  const Whitened wh = whiten(pm, cp, "optimistic");
  const Vector c0 = pm.m_ini * w_ini;
  const double half = 0.5 * lambda;
  ControlResult res;
  Vector mu;
  if (!cp.y_box) {
    // Eliminate mu: for fixed u the inner minimum is (mu_hat - y_ref)^T K (mu_hat - y_ref).
    const Vector shrink = (half / (half + wh.d.array())).matrix();
    const Vector kdiag = wh.d.cwiseProduct(shrink);
    res.solver = run_qp(input_qp(pm, cp, weighted_metric(wh, kdiag), c0), cp.solver, "optimistic");
    res.u_f = res.solver.x;
    const Vector mu_hat = pm.m_u * res.u_f + c0;
    mu = cp.y_ref + weighted_map(wh, shrink, mu_hat - cp.y_ref);
  } else {
    const Eigen::Index nu = pm.m_u.cols();
    const Eigen::Index ny = pm.m_u.rows();
    const Matrix s = symmetrize(wh.g_inv.transpose() * wh.g_inv);
    const Matrix smu = s * pm.m_u;
    QpProblem prob;
    prob.p.resize(nu + ny, nu + ny);
    prob.p.topLeftCorner(nu, nu) = cp.r + half * pm.m_u.transpose() * smu;
    prob.p.topRightCorner(nu, ny) = -half * smu.transpose();
    prob.p.bottomLeftCorner(ny, nu) = -half * smu;
    prob.p.bottomRightCorner(ny, ny) = cp.q + half * s;
    prob.p = 2.0 * symmetrize(prob.p);
    prob.q.resize(nu + ny);
    prob.q << 2.0 * (half * smu.transpose() * c0 - cp.r * cp.u_ref),
        -2.0 * (cp.q * cp.y_ref + half * (s * c0));
    prob.a_eq = Matrix(0, nu + ny);
    prob.b_eq = Vector(0);
    prob.lower.resize(nu + ny);
    prob.upper.resize(nu + ny);
    prob.lower << cp.u_box.lower, cp.y_box->lower;
    prob.upper << cp.u_box.upper, cp.y_box->upper;
    res.solver = run_qp(prob, cp.solver, "optimistic");
    res.u_f = res.solver.x.head(nu);
    mu = res.solver.x.tail(ny);
  }
  const Vector mu_hat = pm.m_u * res.u_f + c0;
  const double penalty = half * (wh.g_inv * (mu - mu_hat)).squaredNorm();
  res.objective = expected_cost(pm, cp, res.u_f, mu) + penalty;
  res.y_pred.mean = std::move(mu);
  res.y_pred.cov = pm.cov;
  res.lambda_effective = lambda;
  return res;
}

HessianReport hessian(const PredictiveModel& pm, const ControlProblem& cp, double lambda) {
  cp.validate();
  if (!(pm.dims == cp.dims) || pm.l_f != cp.l_f) {
    throw ShapeError("hessian: predictive model and control problem disagree on dimensions");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("hessian: lambda must be >= 0");
  const Whitened wh = whiten(pm, cp, "hessian");
  const Matrix k = weighted_metric(wh, robust_kappa(wh, lambda));
  HessianReport rep;
  rep.h = symmetrize(cp.r + pm.m_u.transpose() * k * pm.m_u);
  rep.psd = is_psd(rep.h, 1e-10);
  return rep;
}

LambdaThreshold lambda_threshold(const PredictiveModel& pm, const ControlProblem& cp) {
  cp.validate();
  const Whitened wh = whiten(pm, cp, "lambda_threshold");
  LambdaThreshold out;
  out.lambda0 = threshold_from(wh);
  auto psd_at = [&](double lambda) {
    const Matrix k = weighted_metric(wh, robust_kappa(wh, lambda));
    return is_psd(symmetrize(cp.r + pm.m_u.transpose() * k * pm.m_u), 1e-10);
  };
  if (psd_at(out.lambda0)) {
    out.lambda_psd = out.lambda0;
    return out;
  }
  double lo = out.lambda0;
  double hi = 1e12;
  if (!psd_at(hi)) throw LambdaTooSmall("lambda_threshold: H(lambda) indefinite up to 1e12", hi);
  while (hi - lo > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    (psd_at(mid) ? hi : lo) = mid;
  }
  out.lambda_psd = hi;
  return out;
}

ControlResult robust(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                     const ControlProblem& cp, double lambda) {
  check_compatible(pm, w_ini, cp);
  if (cp.y_box) throw ConfigError("robust: output bounds are not supported");
  if (!std::isfinite(lambda)) throw ConfigError("robust: lambda must be finite");
  const Whitened wh = whiten(pm, cp, "robust");
  const double lambda0 = threshold_from(wh);
  if (!(lambda > 0.0) || lambda < lambda0) {
    std::ostringstream msg;
    msg << "robust: lambda " << lambda << " is below the threshold " << lambda0;
    throw LambdaTooSmall(msg.str(), lambda0);
  }
  const Vector kappa = robust_kappa(wh, lambda);
  const Matrix k = weighted_metric(wh, kappa);
  const Matrix h = symmetrize(cp.r + pm.m_u.transpose() * k * pm.m_u);
  if (!is_psd(h, 1e-10)) {
    const LambdaThreshold thr = lambda_threshold(pm, cp);
    throw LambdaTooSmall("robust: H(lambda) is not PSD", thr.lambda_psd);
  }
  const Vector c0 = pm.m_ini * w_ini;
  ControlResult res;
  res.solver = run_qp(input_qp(pm, cp, k, c0), cp.solver, "robust");
  res.u_f = res.solver.x;
  const Vector mu_hat = pm.m_u * res.u_f + c0;
  const Vector dev = mu_hat - cp.y_ref;
  const Vector stretch = (lambda / (lambda - wh.d.array())).matrix();
  res.y_pred.mean = cp.y_ref + weighted_map(wh, stretch, dev);
  res.y_pred.cov = pm.cov;
  const Vector du = res.u_f - cp.u_ref;
  res.objective = du.dot(cp.r * du) + dev.dot(k * dev) + (cp.q * pm.cov).trace();
  res.lambda_effective = lambda;
  return res;
}

double expected_cost(const PredictiveModel& pm, const ControlProblem& cp,
                     const Eigen::Ref<const Vector>& u_f, const Eigen::Ref<const Vector>& mean) {
  return cp.cost(u_f, mean) + (cp.q * pm.cov).trace();
}

RobustCertificate robust_certificate(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                                     const ControlProblem& cp, double lambda,
                                     const Eigen::Ref<const Vector>& u_f) {
  check_compatible(pm, w_ini, cp);
  const Whitened wh = whiten(pm, cp, "robust_certificate");
  if (!(lambda > 0.0) || lambda < threshold_from(wh)) {
    throw LambdaTooSmall("robust_certificate: lambda below threshold", threshold_from(wh));
  }
  RobustCertificate cert;
  cert.mu_hat = pm.mean(w_ini, u_f);
  const Vector stretch = (lambda / (lambda - wh.d.array())).matrix();
  cert.mu_star = cp.y_ref + weighted_map(wh, stretch, cert.mu_hat - cp.y_ref);
  const Vector white = wh.g_inv * (cert.mu_star - cert.mu_hat);
  cert.kl = 0.5 * white.squaredNorm();
  cert.bound = expected_cost(pm, cp, u_f, cert.mu_star);
  const Vector grad =
      lambda * (wh.g_inv.transpose() * white) - cp.q * (cert.mu_star - cp.y_ref);
  cert.stationarity = grad.cwiseAbs().maxCoeff();
  return cert;
}

double robust_dual_value(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                         const ControlProblem& cp, double lambda,
                         const Eigen::Ref<const Vector>& u_f, double epsilon) {
  const RobustCertificate cert = robust_certificate(pm, w_ini, cp, lambda, u_f);
  return cert.bound - lambda * (2.0 * cert.kl - 2.0 * epsilon);
}

double robust_objective_explicit(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                                 const ControlProblem& cp, double lambda,
                                 const Eigen::Ref<const Vector>& u_f) {
  check_compatible(pm, w_ini, cp);
  const JitteredFactor f = factor_with_jitter(pm.cov, "robust_objective", cp.jitter_scale);
  const Eigen::Index k = pm.cov.rows();
  const Matrix sigma = pm.cov + f.jitter * Matrix::Identity(k, k);
  const Matrix s = symmetrize(sigma.llt().solve(Matrix::Identity(k, k)));
  const Matrix a = symmetrize(lambda * s - cp.q);
  const Vector mu_hat = pm.mean(w_ini, u_f);
  const Vector v = lambda * (s * mu_hat) - cp.q * cp.y_ref;
  const Vector du = u_f - cp.u_ref;
  return v.dot(a.ldlt().solve(v)) - lambda * mu_hat.dot(s * mu_hat) + du.dot(cp.r * du) +
         cp.y_ref.dot(cp.q * cp.y_ref) + (cp.q * pm.cov).trace();
}

}  // namespace gbc
