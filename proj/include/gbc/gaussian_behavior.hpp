#pragma once

// Gaussian behaviors: length-L trajectories modeled as w ~ N(mu, Sigma).
// Covers estimation from data, Gaussian conditioning, the data-driven
// predictive model, the state-space construction, and KL divergence.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gbc/lti_plant.hpp"
#include "gbc/matrix_core.hpp"
#include "gbc/trajectory_data.hpp"

namespace gbc {

/// Row layout of a behavior's stacked vector.
enum class Ordering {
  Interleaved,  ///< [u_0; y_0; u_1; y_1; ...], the layout of data windows
  Stacked,      ///< [u_0; ...; u_{L-1}; y_0; ...; y_{L-1}]
};

std::string to_string(Ordering ordering);
Ordering parse_ordering(const std::string& name);

/// Permutation `perm` with interleaved(i) = stacked(perm[i]).
std::vector<Eigen::Index> stacked_to_interleaved(SignalDims dims, Eigen::Index window_len);

struct GaussianBehavior {
  SignalDims dims;
  Eigen::Index window_len = 0;
  Vector mean;
  Matrix cov;
  Ordering ordering = Ordering::Interleaved;

  Eigen::Index size() const { return Eigen::Index{dims.q()} * window_len; }
  /// Throws on size mismatch, non-finite entries or a non-PSD covariance.
  void validate(double psd_tol = 1e-8) const;
  /// The same distribution expressed in interleaved row order.
  GaussianBehavior interleaved() const;
};

struct ConditionalGaussian {
  Vector mean;
  Matrix cov;
};

/// Affine predictor mu_pred = M_u u_f + M_ini w_ini with predictive covariance.
struct PredictiveModel {
  SignalDims dims;
  int l_ini = 0;
  int l_f = 0;
  Matrix m_u;    ///< p L_f x m L_f
  Matrix m_ini;  ///< p L_f x q L_ini
  Matrix cov;    ///< p L_f x p L_f, symmetric PSD
  Eigen::Index sample_count = 0;

  Vector mean(const Eigen::Ref<const Vector>& w_ini, const Eigen::Ref<const Vector>& u_f) const;
};

/// Sample second moment WW^T/D (zero mean) or the centered covariance.
GaussianBehavior estimate(const DataMatrix& w, bool subtract_mean = false);
GaussianBehavior estimate(const Matrix& columns, SignalDims dims, Eigen::Index window_len,
                          bool subtract_mean = false);

/// Sum of log N(w_i; mean, cov) over the columns of `samples`. `jitter`
/// is added to the diagonal before factorization.
double log_likelihood(const GaussianBehavior& gb, const Matrix& samples, double jitter = 0.0);

/// Conditional law of the rows not in `free_index` given the free rows
/// take `free_value`. Dependent rows keep their stack order. Uses the
/// pseudoinverse of the free-block covariance, so degenerate blocks are
/// allowed.
ConditionalGaussian condition(const GaussianBehavior& gb, std::span<const Eigen::Index> free_index,
                              const Eigen::Ref<const Vector>& free_value,
                              double rank_tol = kDefaultRankTol);

/// Subspace predictor Y_f [W_p; U_f]^+ and the projector-residual covariance.
PredictiveModel predictive_model(const DataMatrix& w, double rank_tol = kDefaultRankTol);

/// Behavior generated by the stochastic state-space model with x_t ~ N(mu_x,
/// Sigma_x) independent of u ~ N(mu_u, Sigma_u). Returned in stacked order.
GaussianBehavior from_state_space(const StochasticLtiModel& model, Eigen::Index window_len,
                                  const Eigen::Ref<const Matrix>& sigma_x,
                                  const Eigen::Ref<const Vector>& mu_x,
                                  const Eigen::Ref<const Matrix>& sigma_u,
                                  const Eigen::Ref<const Vector>& mu_u);

/// Full Gaussian relative entropy KL(p || q).
double kl_divergence(const ConditionalGaussian& p, const ConditionalGaussian& q);

/// n i.i.d. draws (columns), reproducible for a given seed.
Matrix sample(const GaussianBehavior& gb, Eigen::Index n, std::uint64_t seed);
Matrix sample_gaussian(const Eigen::Ref<const Vector>& mean, const Eigen::Ref<const Matrix>& cov,
                       Eigen::Index n, std::uint64_t seed);

inline constexpr double kDefaultJitterScale = 1e-9;

/// Jitter added by `factor_with_jitter`: scale * tr(S) / k.
double default_jitter(const Eigen::Ref<const Matrix>& s, double scale = kDefaultJitterScale);

struct JitteredFactor {
  Matrix lower;         ///< G with G G^T = S + jitter I
  double jitter = 0.0;  ///< 0 when S was already PD
};

/// Cholesky factor of S, retrying once with the default jitter. Throws
/// NotPositiveDefinite if that still fails.
JitteredFactor factor_with_jitter(const Eigen::Ref<const Matrix>& s, std::string_view who,
                                  double scale = kDefaultJitterScale);

}  // namespace gbc
