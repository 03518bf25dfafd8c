#pragma once

// Data-driven predictive controllers over the horizon [u_f; y_f]:
//
//   J(u, y) = (u - u_ref)^T R (u - u_ref) + (y - y_ref)^T Q (y - y_ref)
//
// spc / certainty_equivalence   J with y = M_u u + M_ini w_ini
// deepc                         J + lambda_g h(g) over data combinations g
// optimistic                    J + (lambda/2) |mu - mu_hat(u)|^2_{S}   (min over mu)
// robust                        J at the worst-case mean, penalty lambda |mu - mu_hat|^2_S
//
// with S = Sigma_pred^{-1}. Objectives of the expected-cost controllers
// include tr(Q Sigma_pred); the KL covariance constant is zero because both
// distributions share Sigma_pred.

#include <optional>
#include <string>

#include "gbc/gaussian_behavior.hpp"
#include "gbc/qp_solver.hpp"
#include "gbc/trajectory_data.hpp"

namespace gbc {

struct Box {
  Vector lower;
  Vector upper;

  Eigen::Index size() const { return lower.size(); }
  static Box unbounded(Eigen::Index n);
  /// The per-step bounds repeated over `steps` time steps.
  static Box repeat(const Eigen::Ref<const Vector>& step_lower,
                    const Eigen::Ref<const Vector>& step_upper, Eigen::Index steps);
};

struct ControlProblem {
  SignalDims dims;
  int l_ini = 1;
  int l_f = 1;
  Matrix q;  ///< p L_f x p L_f, PSD
  Matrix r;  ///< m L_f x m L_f, PD
  Vector u_ref;
  Vector y_ref;
  Box u_box;
  std::optional<Box> y_box;  ///< bounds on the predicted mean
  QpSettings solver;
  double rank_tol = kDefaultRankTol;
  double jitter_scale = kDefaultJitterScale;

  /// Zero references, no bounds, Q = q_weight I, R = r_weight I.
  static ControlProblem make(SignalDims dims, int l_ini, int l_f, double q_weight = 1.0,
                             double r_weight = 1.0);
  /// Throws ShapeError / InvalidMatrix / ConfigError.
  void validate() const;
  double cost(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& y) const;
};

struct ControlResult {
  Vector u_f;
  ConditionalGaussian y_pred;
  double objective = 0.0;
  std::optional<Vector> g;
  QpSolution solver;
  double lambda_effective = 0.0;
};

enum class Regularizer { Proj2, Sq2, L1 };

std::string to_string(Regularizer reg);
Regularizer parse_regularizer(const std::string& name);

/// Every controller throws Infeasible when its QP is certified infeasible.
ControlResult spc(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                  const ControlProblem& cp);

/// Same minimizer as spc; the objective adds tr(Q Sigma_pred).
ControlResult certainty_equivalence(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                                    const ControlProblem& cp);

/// Decision variables [g; u_f; y_f] with [w_ini; u_f; y_f] = [W_p; U_f; Y_f] g.
///   proj2: h(g) = |(I - Pi) g|^2,  Pi = [W_p; U_f]^+ [W_p; U_f]
///   sq2:   h(g) = |g|^2
///   l1:    h(g) = |g|_1
/// y_pred.cov is the predictive covariance of the same data.
ControlResult deepc(const DataMatrix& w, const Eigen::Ref<const Vector>& w_ini,
                    const ControlProblem& cp, Regularizer reg, double lambda_g);

/// Joint minimization over (u_f, mu); y_pred.mean is the optimal mu.
ControlResult optimistic(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                         const ControlProblem& cp, double lambda);

/// Minimizes the worst-case bound over u_f; y_pred.mean is mu*(u_f).
/// Throws LambdaTooSmall below the certified threshold and ConfigError
/// when output bounds are requested.
ControlResult robust(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                     const ControlProblem& cp, double lambda);

struct HessianReport {
  Matrix h;
  bool psd = false;
};

/// H(lambda) = lambda^2 M_u^T S (lambda S - Q)^{-1} S M_u - lambda M_u^T S M_u + R.
/// The quadratic cost u^T H u has Hessian 2H.
HessianReport hessian(const PredictiveModel& pm, const ControlProblem& cp, double lambda);

struct LambdaThreshold {
  double lambda0 = 0.0;     ///< lambda S - Q is PD for lambda > lambda0
  double lambda_psd = 0.0;  ///< smallest lambda >= lambda0 with H(lambda) PSD
};

LambdaThreshold lambda_threshold(const PredictiveModel& pm, const ControlProblem& cp);

/// Expected cost E[J] under N(mean, Sigma_pred).
double expected_cost(const PredictiveModel& pm, const ControlProblem& cp,
                     const Eigen::Ref<const Vector>& u_f, const Eigen::Ref<const Vector>& mean);

/// The inner worst case of the robust problem at a fixed input.
struct RobustCertificate {
  Vector mu_hat;      ///< nominal predictive mean
  Vector mu_star;     ///< maximizer of |mu - y_ref|^2_Q - lambda |mu - mu_hat|^2_S
  double kl = 0.0;    ///< KL(N(mu_star, Sigma) || N(mu_hat, Sigma))
  double bound = 0.0; ///< dual value at epsilon = kl
  double stationarity = 0.0;  ///< |lambda S (mu* - mu_hat) - Q (mu* - y_ref)|_inf
};

RobustCertificate robust_certificate(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                                     const ControlProblem& cp, double lambda,
                                     const Eigen::Ref<const Vector>& u_f);

/// Upper bound on the worst-case expected cost over the KL ball of radius
/// epsilon, for the given multiplier and input.
double robust_dual_value(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                         const ControlProblem& cp, double lambda,
                         const Eigen::Ref<const Vector>& u_f, double epsilon);

/// The robust cost written with explicit inverses, term for term:
/// |lambda S mu_hat - Q y_ref|^2_{(lambda S - Q)^{-1}} - lambda |mu_hat|^2_S
/// + |u - u_ref|^2_R + y_ref^T Q y_ref + tr(Q Sigma).
double robust_objective_explicit(const PredictiveModel& pm, const Eigen::Ref<const Vector>& w_ini,
                                 const ControlProblem& cp, double lambda,
                                 const Eigen::Ref<const Vector>& u_f);

}  // namespace gbc
