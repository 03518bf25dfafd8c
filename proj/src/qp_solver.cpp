#include "gbc/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gbc/errors.hpp"

namespace gbc {

QpProblem QpProblem::unconstrained(Matrix p, Vector q) {
  const Eigen::Index n = q.size();
  return {std::move(p), std::move(q), Matrix(0, n), Vector(0),
          Vector::Constant(n, -kInfinity), Vector::Constant(n, kInfinity)};
}

void QpProblem::validate() const {
  const Eigen::Index nn = q.size();
  if (p.rows() != nn || p.cols() != nn) throw ShapeError("QpProblem: P must be n x n");
  if (a_eq.cols() != nn && a_eq.rows() > 0) throw ShapeError("QpProblem: A_eq must have n columns");
  if (a_eq.rows() != b_eq.size()) throw ShapeError("QpProblem: b_eq size must match A_eq rows");
  if (lower.size() != nn || upper.size() != nn) throw ShapeError("QpProblem: bounds must be n-vectors");
  require_finite(p, "QpProblem P");
  require_finite(q, "QpProblem q");
  require_finite(a_eq, "QpProblem A_eq");
  require_finite(b_eq, "QpProblem b_eq");
  if (lower.hasNaN() || upper.hasNaN()) throw InvalidMatrix("QpProblem: NaN bound");
  if ((lower.array() > upper.array()).any()) throw InvalidMatrix("QpProblem: lower > upper");
  if (!is_psd(p, 1e-8)) throw InvalidMatrix("QpProblem: P is not PSD");
}

double QpProblem::objective(const Eigen::Ref<const Vector>& x) const {
  return 0.5 * x.dot(p * x) + q.dot(x);
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::MaxIter: return "max_iter";
    case QpStatus::Infeasible: return "infeasible";
  }
  return "unknown";
}

namespace {

constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kEqRhoFactor = 1e3;

bool is_inf(double v) { return std::abs(v) >= kInfinity; }

double inf_norm(const Eigen::Ref<const Vector>& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

double clamp_scale(double norm) {
  if (norm < kMinScaling) return 1.0;  // empty row or column: leave untouched
  return std::clamp(1.0 / std::sqrt(norm), kMinScaling, kMaxScaling);
}

// Problem data in the l <= A x <= u form, equilibrated by diagonal
// scalings: P_s = c D P D, q_s = c D q, A_s = E A D, bounds scaled by E.
struct ScaledProblem {
  Matrix p, a;
  Vector q, l, u;
  Vector d, e;  // variable and constraint scalings
  double c = 1.0;
  std::vector<char> is_eq, lower_inf, upper_inf;
};

ScaledProblem make_scaled(const QpProblem& prob, int iters) {
  const Eigen::Index n = prob.n();
  const Eigen::Index me = prob.a_eq.rows();
  const Eigen::Index mc = me + n;
  ScaledProblem s;
  s.p = symmetrize(prob.p);
  s.q = prob.q;
  s.a = Matrix::Zero(mc, n);
  if (me > 0) s.a.topRows(me) = prob.a_eq;
  s.a.bottomRows(n).setIdentity();
  s.l.resize(mc);
  s.u.resize(mc);
  s.l << prob.b_eq, prob.lower;
  s.u << prob.b_eq, prob.upper;
  s.is_eq.assign(static_cast<std::size_t>(mc), 0);
  s.lower_inf.assign(static_cast<std::size_t>(mc), 0);
  s.upper_inf.assign(static_cast<std::size_t>(mc), 0);
  for (Eigen::Index i = 0; i < mc; ++i) {
    const auto k = static_cast<std::size_t>(i);
    s.lower_inf[k] = is_inf(s.l(i)) && s.l(i) < 0;
    s.upper_inf[k] = is_inf(s.u(i)) && s.u(i) > 0;
    s.is_eq[k] = !s.lower_inf[k] && !s.upper_inf[k] && s.l(i) == s.u(i);
  }

  s.d = Vector::Ones(n);
  s.e = Vector::Ones(mc);
  s.c = 1.0;
  for (int it = 0; it < iters; ++it) {
    Vector dd(n), ee(mc);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double col = std::max(s.p.col(j).cwiseAbs().maxCoeff(), s.a.col(j).cwiseAbs().maxCoeff());
      dd(j) = clamp_scale(col);
    }
    for (Eigen::Index i = 0; i < mc; ++i) ee(i) = clamp_scale(s.a.row(i).cwiseAbs().maxCoeff());
    s.p = dd.asDiagonal() * s.p * dd.asDiagonal();
    s.a = ee.asDiagonal() * s.a * dd.asDiagonal();
    s.q = dd.cwiseProduct(s.q);
    s.d = s.d.cwiseProduct(dd);
    s.e = s.e.cwiseProduct(ee);
    // cost scaling
    double mean_col = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) mean_col += s.p.col(j).cwiseAbs().maxCoeff();
    mean_col = n > 0 ? mean_col / static_cast<double>(n) : 0.0;
    const double cost_norm = std::max(mean_col, inf_norm(s.q));
    double gamma = cost_norm < kMinScaling ? 1.0 : 1.0 / cost_norm;
    gamma = std::clamp(gamma, kMinScaling, kMaxScaling);
    s.p *= gamma;
    s.q *= gamma;
    s.c *= gamma;
  }
  for (Eigen::Index i = 0; i < mc; ++i) {
    const auto k = static_cast<std::size_t>(i);
    s.l(i) = s.lower_inf[k] ? -kInfinity : s.e(i) * s.l(i);
    s.u(i) = s.upper_inf[k] ? kInfinity : s.e(i) * s.u(i);
  }
  return s;
}

constexpr double kRoundoff = 64.0 * std::numeric_limits<double>::epsilon();

struct Residuals {
  double prim = 0.0, dual = 0.0, tol_prim = 0.0, tol_dual = 0.0;
  double prim_rel = 0.0, dual_rel = 0.0;
  bool converged() const { return prim <= tol_prim && dual <= tol_dual; }
};

// Residuals of the unscaled problem evaluated at a scaled iterate.
Residuals residuals(const ScaledProblem& s, const QpSettings& st, const Vector& xs,
                    const Vector& zs, const Vector& ys) {
  const Vector e_inv = s.e.cwiseInverse();
  const Vector d_inv = s.d.cwiseInverse();
  const Vector ax = s.a * xs;
  const Vector px = s.p * xs;
  const Vector aty = s.a.transpose() * ys;
  Residuals r;
  const double ax_n = inf_norm(e_inv.cwiseProduct(ax));
  const double z_n = inf_norm(e_inv.cwiseProduct(zs));
  r.prim = inf_norm(e_inv.cwiseProduct(ax - zs));
  const double scale_prim = std::max(ax_n, z_n);
  r.tol_prim = st.eps_abs + st.eps_rel * scale_prim;
  const double inv_c = 1.0 / s.c;
  r.dual = inv_c * inf_norm(d_inv.cwiseProduct(px + s.q + aty));
  const double scale_dual = inv_c * std::max({inf_norm(d_inv.cwiseProduct(px)),
                                              inf_norm(d_inv.cwiseProduct(aty)),
                                              inf_norm(d_inv.cwiseProduct(s.q))});
  // Floor at the rounding error of the products themselves; with entries
  // spanning many magnitudes the residual cannot be evaluated below it.
  const Vector mag = s.p.cwiseAbs() * xs.cwiseAbs() + s.a.cwiseAbs().transpose() * ys.cwiseAbs();
  const double roundoff = kRoundoff * inv_c * inf_norm(d_inv.cwiseProduct(mag));
  r.tol_dual = st.eps_abs + st.eps_rel * scale_dual + roundoff;
  r.prim_rel = r.prim / std::max(scale_prim, 1e-30);
  r.dual_rel = r.dual / std::max(scale_dual, 1e-30);
  return r;
}

Vector project(const ScaledProblem& s, const Vector& v) {
  return v.cwiseMax(s.l).cwiseMin(s.u);
}

bool primal_infeasible(const ScaledProblem& s, const Vector& dy_scaled, double eps) {
  const Vector dy = s.e.cwiseProduct(dy_scaled);
  const double norm = inf_norm(dy);
  if (norm < 1e-30) return false;
  const Vector atdy = s.d.cwiseInverse().cwiseProduct(s.a.transpose() * dy_scaled);
  if (inf_norm(atdy) > eps * norm) return false;
  double support = 0.0;
  const double small = eps * norm;
  for (Eigen::Index i = 0; i < dy.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (dy(i) > small) {
      if (s.upper_inf[k]) return false;
      support += (s.u(i) / s.e(i)) * dy(i);
    } else if (dy(i) < -small) {
      if (s.lower_inf[k]) return false;
      support += (s.l(i) / s.e(i)) * dy(i);
    }
  }
  return support < -eps * norm;
}

struct Polished {
  Vector x, y;
  bool ok = false;
};

// Solve the equality-constrained KKT system on the guessed active set,
// with a small diagonal regularization removed by iterative refinement.
Polished polish(const ScaledProblem& s, const QpSettings& st, const Vector& zs, const Vector& ys,
                const std::vector<int>& active) {
  const Eigen::Index n = s.p.rows();
  std::vector<Eigen::Index> rows;
  Vector target_full(s.a.rows());
  for (Eigen::Index i = 0; i < s.a.rows(); ++i) {
    const int a = active[static_cast<std::size_t>(i)];
    if (a != 0) {
      rows.push_back(i);
      target_full(i) = a < 0 ? s.l(i) : s.u(i);
    }
  }
  const auto na = static_cast<Eigen::Index>(rows.size());
  Matrix kkt = Matrix::Zero(n + na, n + na);
  kkt.topLeftCorner(n, n) = s.p;
  Vector rhs(n + na);
  rhs.head(n) = -s.q;
  for (Eigen::Index k = 0; k < na; ++k) {
    kkt.block(n + k, 0, 1, n) = s.a.row(rows[static_cast<std::size_t>(k)]);
    kkt.block(0, n + k, n, 1) = s.a.row(rows[static_cast<std::size_t>(k)]).transpose();
    rhs(n + k) = target_full(rows[static_cast<std::size_t>(k)]);
  }
  constexpr double kDelta = 1e-9;
  Matrix reg = kkt;
  reg.diagonal().head(n).array() += kDelta;
  reg.diagonal().tail(na).array() -= kDelta;
  Eigen::PartialPivLU<Matrix> lu(reg);
  Vector sol = lu.solve(rhs);
  for (int it = 0; it < 30; ++it) {
    const Vector res = rhs - kkt * sol;
    if (!res.allFinite()) break;
    if (inf_norm(res) <= 1e-15 * std::max(1.0, inf_norm(rhs))) break;
    sol += lu.solve(res);
  }
  Polished out;
  if (!sol.allFinite()) return out;
  out.x = sol.head(n);
  out.y = Vector::Zero(s.a.rows());
  for (Eigen::Index k = 0; k < na; ++k) out.y(rows[static_cast<std::size_t>(k)]) = sol(n + k);

  // Accept only if the polished point is primal/dual feasible and the
  // multiplier signs match the active side.
  const Vector ax = s.a * out.x;
  const Vector z = project(s, ax);
  const Residuals r = residuals(s, st, out.x, z, out.y);
  if (!r.converged()) return out;
  const double sign_tol = r.tol_dual;
  for (Eigen::Index i = 0; i < s.a.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (s.is_eq[k]) continue;
    const double y_unscaled = s.e(i) * out.y(i) / s.c;
    if (active[k] < 0 && y_unscaled > sign_tol) return out;
    if (active[k] > 0 && y_unscaled < -sign_tol) return out;
  }
  (void)zs;
  (void)ys;
  out.ok = true;
  return out;
}

std::vector<int> active_set(const ScaledProblem& s, const Vector& zs, const Vector& ys) {
  std::vector<int> act(static_cast<std::size_t>(zs.size()), 0);
  for (Eigen::Index i = 0; i < zs.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (s.is_eq[k]) {
      act[k] = 1;
    } else if (!s.lower_inf[k] && zs(i) - s.l(i) < -ys(i)) {
      act[k] = -1;
    } else if (!s.upper_inf[k] && s.u(i) - zs(i) < ys(i)) {
      act[k] = 1;
    }
  }
  return act;
}

}  // namespace

QpSolution solve(const QpProblem& problem, const QpSettings& st) {
  problem.validate();
  const Eigen::Index n = problem.n();
  const Eigen::Index me = problem.a_eq.rows();
  const ScaledProblem s = make_scaled(problem, st.scaling_iters);
  const Eigen::Index mc = s.a.rows();

  Vector rho(mc);
  auto set_rho = [&](double base) {
    for (Eigen::Index i = 0; i < mc; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (s.lower_inf[k] && s.upper_inf[k]) rho(i) = kRhoMin;
      else if (s.is_eq[k]) rho(i) = kEqRhoFactor * base;
      else rho(i) = base;
    }
  };
  double rho_base = std::clamp(st.rho, kRhoMin, kRhoMax);
  set_rho(rho_base);

  Eigen::LLT<Matrix> llt;
  auto factor = [&]() {
    Matrix k = s.p + s.a.transpose() * rho.asDiagonal() * s.a;
    k.diagonal().array() += st.sigma;
    llt.compute(k);
    if (llt.info() != Eigen::Success) throw InvalidMatrix("qp solve: KKT factorization failed");
  };
  factor();

  Vector x = Vector::Zero(n), z = Vector::Zero(mc), y = Vector::Zero(mc);
  Vector y_prev = y;
  Residuals res;
  QpSolution sol;
  sol.status = QpStatus::MaxIter;
  std::vector<int> last_failed_active;
  bool done = false;
  int iter = 0;

  auto finish_with = [&](const Vector& xs, const Vector& ys, bool polished) {
    sol.x = s.d.cwiseProduct(xs);
    const Vector y_un = s.e.cwiseProduct(ys) / s.c;
    sol.y_eq = y_un.head(me);
    // Bound rows of the scaled problem are rows of E I D; unscaling maps them
    // back to multipliers of the plain identity rows.
    sol.y_bound = y_un.tail(n);
    sol.polished = polished;
  };

  auto try_polish = [&](bool strict_converged) -> bool {
    if (!st.polish) return false;
    std::vector<int> act = active_set(s, z, y);
    if (!strict_converged && act == last_failed_active) return false;
    Polished pol = polish(s, st, z, y, act);
    if (!pol.ok) {
      last_failed_active = std::move(act);
      return false;
    }
    const Vector zp = project(s, s.a * pol.x);
    res = residuals(s, st, pol.x, zp, pol.y);
    finish_with(pol.x, pol.y, true);
    return true;
  };

  for (iter = 1; iter <= st.max_iter; ++iter) {
    y_prev = y;
    const Vector rhs = st.sigma * x - s.q + s.a.transpose() * (rho.cwiseProduct(z) - y);
    const Vector x_tilde = llt.solve(rhs);
    const Vector z_tilde = s.a * x_tilde;
    const Vector x_new = st.alpha * x_tilde + (1.0 - st.alpha) * x;
    const Vector z_relaxed = st.alpha * z_tilde + (1.0 - st.alpha) * z;
    const Vector z_new = project(s, z_relaxed + y.cwiseQuotient(rho));
    y += rho.cwiseProduct(z_relaxed - z_new);
    x = x_new;
    z = z_new;

    if (iter % st.check_every != 0 && iter != st.max_iter) continue;

    res = residuals(s, st, x, z, y);
    if (res.converged()) {
      if (!try_polish(true)) finish_with(x, y, false);
      sol.status = QpStatus::Optimal;
      done = true;
      break;
    }
    if (primal_infeasible(s, y - y_prev, st.eps_infeasible)) {
      finish_with(x, y, false);
      sol.status = QpStatus::Infeasible;
      done = true;
      break;
    }
    // Early polish once the iterate is close; this is what delivers
    // high accuracy on ill-conditioned problems.
    const bool close = res.prim <= std::max(1e-3, 1e4 * res.tol_prim) &&
                       res.dual <= std::max(1e-3, 1e4 * res.tol_dual);
    if (close && try_polish(false)) {
      sol.status = QpStatus::Optimal;
      done = true;
      break;
    }
    if (st.adaptive_rho && res.dual_rel > 0.0 && res.prim_rel > 0.0) {
      const double ratio = std::sqrt(res.prim_rel / res.dual_rel);
      if (ratio > 5.0 || ratio < 0.2) {
        rho_base = std::clamp(rho_base * ratio, kRhoMin, kRhoMax);
        set_rho(rho_base);
        factor();
      }
    }
  }
  if (!done) {
    iter = st.max_iter;
    if (try_polish(true)) {
      sol.status = QpStatus::Optimal;
    } else {
      finish_with(x, y, false);
      sol.status = QpStatus::MaxIter;
    }
  }
  sol.iterations = std::min(iter, st.max_iter);
  sol.primal_residual = res.prim;
  sol.dual_residual = res.dual;
  sol.objective = problem.objective(sol.x);
  return sol;
}

QpProblem l1_epigraph(const QpProblem& problem, double weight,
                      std::span<const Eigen::Index> selector) {
  if (weight < 0.0) throw InvalidMatrix("l1_epigraph: weight must be >= 0");
  const Eigen::Index n = problem.n();
  const auto k = static_cast<Eigen::Index>(selector.size());
  for (Eigen::Index i : selector) {
    if (i < 0 || i >= n) throw ShapeError("l1_epigraph: selector index out of range");
  }
  const Eigen::Index na = n + 2 * k;
  const Eigen::Index me = problem.a_eq.rows();
  QpProblem out;
  out.p = Matrix::Zero(na, na);
  out.p.topLeftCorner(n, n) = problem.p;
  out.q = Vector::Zero(na);
  out.q.head(n) = problem.q;
  out.q.tail(2 * k).setConstant(weight);
  out.a_eq = Matrix::Zero(me + k, na);
  if (me > 0) out.a_eq.topLeftCorner(me, n) = problem.a_eq;
  out.b_eq = Vector::Zero(me + k);
  out.b_eq.head(me) = problem.b_eq;
  for (Eigen::Index j = 0; j < k; ++j) {
    // x_i - a_j + b_j = 0
    out.a_eq(me + j, selector[static_cast<std::size_t>(j)]) = 1.0;
    out.a_eq(me + j, n + j) = -1.0;
    out.a_eq(me + j, n + k + j) = 1.0;
  }
  out.lower = Vector::Zero(na);
  out.upper = Vector::Constant(na, kInfinity);
  out.lower.head(n) = problem.lower;
  out.upper.head(n) = problem.upper;
  return out;
}

QpConditionReport condition_report(const QpProblem& problem) {
  QpConditionReport r;
  if (problem.p.size() > 0) {
    const SymEig eig = sym_eig(problem.p);
    r.lambda_max = eig.values(0);
    r.lambda_min = eig.values(eig.values.size() - 1);
  }
  r.rank_eq = problem.a_eq.rows() > 0 ? numerical_rank(problem.a_eq) : 0;
  return r;
}

}  // namespace gbc
