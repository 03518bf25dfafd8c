#pragma once

// Dense convex QP
//   minimize    1/2 x^T P x + q^T x
//   subject to  A_eq x = b_eq,  lower <= x <= upper
// solved by operator splitting (ADMM) on the combined constraint set
// l <= [A_eq; I] x <= u, followed by an active-set polish.

#include <span>

#include "gbc/matrix_core.hpp"

namespace gbc {

/// Bounds at or beyond this magnitude are treated as infinite.
inline constexpr double kInfinity = 1e30;

struct QpProblem {
  Matrix p;
  Vector q;
  Matrix a_eq;  ///< m_e x n, may have zero rows
  Vector b_eq;
  Vector lower;  ///< -kInfinity for unbounded
  Vector upper;  ///< +kInfinity for unbounded

  Eigen::Index n() const { return q.size(); }

  /// n variables, no constraints.
  static QpProblem unconstrained(Matrix p, Vector q);
  /// Throws ShapeError / InvalidMatrix when the data violate the QP contract.
  void validate() const;
  double objective(const Eigen::Ref<const Vector>& x) const;
};

struct QpSettings {
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  int max_iter = 50000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;  ///< over-relaxation
  bool polish = true;
  bool adaptive_rho = true;
  int check_every = 25;
  int scaling_iters = 10;
  double eps_infeasible = 1e-7;
};

enum class QpStatus { Optimal, MaxIter, Infeasible };

const char* to_string(QpStatus status);

struct QpSolution {
  Vector x;
  /// Multipliers with P x + q + A_eq^T y_eq + y_bound = 0; y_bound(i) > 0
  /// at an active upper bound and < 0 at an active lower bound.
  Vector y_eq;
  Vector y_bound;
  double objective = 0.0;
  QpStatus status = QpStatus::MaxIter;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  bool polished = false;
};

QpSolution solve(const QpProblem& problem, const QpSettings& settings = {});

/// Adds weight * sum |x_i| over `selector` by splitting x_i = a_i - b_i
/// with a, b >= 0 and linear cost weight * (a + b). The original variables
/// stay first, so x = solution.x.head(problem.n()).
QpProblem l1_epigraph(const QpProblem& problem, double weight,
                      std::span<const Eigen::Index> selector);

struct QpConditionReport {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  Eigen::Index rank_eq = 0;
};

QpConditionReport condition_report(const QpProblem& problem);

}  // namespace gbc
