#pragma once

// Stochastic discrete-time LTI plant
//   x_{t+1} = A x_t + B u_t + xi_t,   y_t = C x_t + D u_t + eta_t
// with i.i.d. zero-mean Gaussian xi ~ N(0, Sigma_xi), eta ~ N(0, Sigma_eta).

#include <cstdint>
#include <functional>
#include <random>
#include <variant>

#include "gbc/matrix_core.hpp"
#include "gbc/trajectory_data.hpp"

namespace gbc {

struct StochasticLtiModel {
  Matrix a, b, c, d;
  Matrix sigma_xi;   ///< n x n process-noise covariance
  Matrix sigma_eta;  ///< p x p measurement-noise covariance

  Eigen::Index n() const { return a.rows(); }
  Eigen::Index m() const { return b.cols(); }
  Eigen::Index p() const { return c.rows(); }
  SignalDims dims() const { return {static_cast<int>(m()), static_cast<int>(p())}; }

  /// Throws ShapeError / InvalidMatrix on inconsistent or non-PSD data.
  void validate() const;
};

/// Extended observability and Toeplitz operators for a length-L window:
///   y = O_L x_t + T_u u + T_xi xi + eta.
struct BlockOperators {
  Matrix observability;  ///< pL x n
  Matrix toeplitz_u;     ///< pL x mL
  Matrix toeplitz_xi;    ///< pL x nL, the input Toeplitz with B = I and D = 0
};

BlockOperators build_block_operators(const StochasticLtiModel& model, Eigen::Index window_len);

struct StepResult {
  Vector x_next;
  Vector y;
};

StepResult step(const StochasticLtiModel& model, const Eigen::Ref<const Vector>& x,
                const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& xi,
                const Eigen::Ref<const Vector>& eta);

/// Independent seeded generators, one per random source, so each source
/// can be replayed on its own.
class NoiseStreams {
 public:
  explicit NoiseStreams(std::uint64_t seed);

  Vector process(const StochasticLtiModel& model);
  Vector measurement(const StochasticLtiModel& model);
  Vector input(Eigen::Index m, double stddev);
  /// Draw from N(mean, cov) on the initial-state stream.
  Vector initial_state(const Eigen::Ref<const Vector>& mean, const Eigen::Ref<const Matrix>& cov);

 private:
  Vector gaussian(std::mt19937_64& gen, const Eigen::Ref<const Matrix>& cov_factor);

  std::mt19937_64 xi_, eta_, u_, x0_;
  // Cached square-root factors keyed by the covariance they came from.
  Matrix xi_cov_, xi_factor_, eta_cov_, eta_factor_;
};

/// Symmetric square root factor F with F F^T = S for PSD S (clamped eigenvalues).
Matrix psd_factor(const Eigen::Ref<const Matrix>& s);

struct GaussianState {
  Vector mean;
  Matrix cov;
};

using InitialState = std::variant<Vector, GaussianState>;

/// White Gaussian excitation u_t ~ N(0, stddev^2 I) drawn from the input stream.
struct WhiteInput {
  double stddev = 1.0;
};

/// Input as an explicit m x T sequence, a generator u(t), or white noise.
using InputFn = std::function<Vector(Eigen::Index t)>;
using InputPolicy = std::variant<Matrix, InputFn, WhiteInput>;

struct Simulation {
  Trajectory trajectory;
  Matrix states;  ///< n x (T+1), states(:, t) = x_t
  bool unstable = false;
};

/// Seeded, reproducible rollout of length T. Logs a warning (does not
/// throw) when rho(A) >= 1.
Simulation simulate(const StochasticLtiModel& model, const InitialState& x0,
                    const InputPolicy& inputs, Eigen::Index horizon, std::uint64_t seed);

/// Stationary state covariance under white input of the given std:
/// Sigma_x = A Sigma_x A^T + stddev^2 B B^T + Sigma_xi.
Matrix stationary_state_cov(const StochasticLtiModel& model, double input_stddev);

/// Shipped 3-state SISO benchmark (stable, observable, controllable) with
/// Sigma_xi = process_std^2 I and Sigma_eta = measurement_std^2.
StochasticLtiModel default_benchmark(double process_std = 0.01, double measurement_std = 0.05);

/// Random Schur-stable model with the requested dimensions and spectral radius.
StochasticLtiModel random_stable_model(Eigen::Index n, Eigen::Index m, Eigen::Index p,
                                       double radius, double process_std, double measurement_std,
                                       std::mt19937_64& gen);

}  // namespace gbc
