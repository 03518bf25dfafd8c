#include "gbc/lti_plant.hpp"

#include <cmath>
#include <string>

#include "gbc/errors.hpp"
#include "gbc/log.hpp"

namespace gbc {

void StochasticLtiModel::validate() const {
  const Eigen::Index nn = a.rows();
  if (a.cols() != nn) throw ShapeError("model: A must be square");
  if (b.rows() != nn) throw ShapeError("model: B row count must equal n");
  if (c.cols() != nn) throw ShapeError("model: C column count must equal n");
  if (d.rows() != c.rows() || d.cols() != b.cols()) throw ShapeError("model: D must be p x m");
  if (sigma_xi.rows() != nn || sigma_xi.cols() != nn) throw ShapeError("model: Sigma_xi must be n x n");
  if (sigma_eta.rows() != c.rows() || sigma_eta.cols() != c.rows()) {
    throw ShapeError("model: Sigma_eta must be p x p");
  }
  if (b.cols() < 1 || c.rows() < 1) throw ShapeError("model: need m >= 1 and p >= 1");
  for (const Matrix* mat : {&a, &b, &c, &d, &sigma_xi, &sigma_eta}) require_finite(*mat, "model");
  if (!is_psd(sigma_xi, 1e-10) || !is_psd(sigma_eta, 1e-10)) {
    throw InvalidMatrix("model: noise covariances must be PSD");
  }
}

BlockOperators build_block_operators(const StochasticLtiModel& model, Eigen::Index window_len) {
  model.validate();
  if (window_len < 1) throw ShapeError("build_block_operators: L must be >= 1");
  const Eigen::Index n = model.n(), m = model.m(), p = model.p(), len = window_len;

  BlockOperators ops;
  ops.observability.resize(p * len, n);
  // markov_u[k] = C A^{k-1} B for k >= 1, D for k = 0; markov_xi[k] = C A^{k-1}, 0.
  std::vector<Matrix> markov_u(static_cast<std::size_t>(len));
  std::vector<Matrix> markov_xi(static_cast<std::size_t>(len));
  Matrix ca = model.c;  // C A^k
  for (Eigen::Index k = 0; k < len; ++k) {
    ops.observability.middleRows(k * p, p) = ca;
    if (k + 1 < len) {
      markov_u[static_cast<std::size_t>(k + 1)] = ca * model.b;
      markov_xi[static_cast<std::size_t>(k + 1)] = ca;
    }
    ca = ca * model.a;
  }
  markov_u[0] = model.d;
  markov_xi[0] = Matrix::Zero(p, n);

  ops.toeplitz_u = Matrix::Zero(p * len, m * len);
  ops.toeplitz_xi = Matrix::Zero(p * len, n * len);
  for (Eigen::Index i = 0; i < len; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      ops.toeplitz_u.block(i * p, j * m, p, m) = markov_u[static_cast<std::size_t>(i - j)];
      ops.toeplitz_xi.block(i * p, j * n, p, n) = markov_xi[static_cast<std::size_t>(i - j)];
    }
  }
  return ops;
}

StepResult step(const StochasticLtiModel& model, const Eigen::Ref<const Vector>& x,
                const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& xi,
                const Eigen::Ref<const Vector>& eta) {
  if (x.size() != model.n() || u.size() != model.m() || xi.size() != model.n() ||
      eta.size() != model.p()) {
    throw ShapeError("step: argument sizes do not match the model");
  }
  return {model.a * x + model.b * u + xi, model.c * x + model.d * u + eta};
}

Matrix psd_factor(const Eigen::Ref<const Matrix>& s) {
  if (s.size() == 0) return Matrix(s.rows(), s.cols());
  const SymEig eig = sym_eig(s);
  const Vector root = eig.values.cwiseMax(0.0).cwiseSqrt();
  return eig.vectors * root.asDiagonal();
}

namespace {

std::mt19937_64 make_stream(std::uint64_t seed, std::uint32_t source) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    source, 0x9e3779b9u};
  return std::mt19937_64(seq);
}

}  // namespace

NoiseStreams::NoiseStreams(std::uint64_t seed)
    : xi_(make_stream(seed, 1)), eta_(make_stream(seed, 2)), u_(make_stream(seed, 3)),
      x0_(make_stream(seed, 4)) {}

Vector NoiseStreams::gaussian(std::mt19937_64& gen, const Eigen::Ref<const Matrix>& cov_factor) {
  Vector z(cov_factor.cols());
  // A fresh distribution per draw keeps its cached spare value from
  // leaking between streams.
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(gen);
  return cov_factor * z;
}

Vector NoiseStreams::process(const StochasticLtiModel& model) {
  if (xi_cov_.size() != model.sigma_xi.size() || xi_cov_ != model.sigma_xi) {
    xi_cov_ = model.sigma_xi;
    xi_factor_ = psd_factor(xi_cov_);
  }
  return gaussian(xi_, xi_factor_);
}

Vector NoiseStreams::measurement(const StochasticLtiModel& model) {
  if (eta_cov_.size() != model.sigma_eta.size() || eta_cov_ != model.sigma_eta) {
    eta_cov_ = model.sigma_eta;
    eta_factor_ = psd_factor(eta_cov_);
  }
  return gaussian(eta_, eta_factor_);
}

Vector NoiseStreams::input(Eigen::Index m, double stddev) {
  Vector u(m);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < m; ++i) u(i) = stddev * normal(u_);
  return u;
}

Vector NoiseStreams::initial_state(const Eigen::Ref<const Vector>& mean,
                                   const Eigen::Ref<const Matrix>& cov) {
  return mean + gaussian(x0_, psd_factor(cov));
}

Simulation simulate(const StochasticLtiModel& model, const InitialState& x0,
                    const InputPolicy& inputs, Eigen::Index horizon, std::uint64_t seed) {
  model.validate();
  if (horizon < 1) throw TooShort("simulate: horizon must be >= 1");
  const double rho = spectral_radius(model.a);
  const bool unstable = rho >= 1.0;
  if (unstable) log::warn("simulate: spectral radius " + std::to_string(rho) + " >= 1");

  NoiseStreams noise(seed);
  Vector x;
  if (const auto* fixed = std::get_if<Vector>(&x0)) {
    x = *fixed;
  } else {
    const auto& dist = std::get<GaussianState>(x0);
    x = noise.initial_state(dist.mean, dist.cov);
  }
  if (x.size() != model.n()) throw ShapeError("simulate: initial state has wrong size");

  if (const auto* seq = std::get_if<Matrix>(&inputs)) {
    if (seq->rows() != model.m() || seq->cols() < horizon) {
      throw ShapeError("simulate: input sequence must be m x T");
    }
  }

  Matrix states(model.n(), horizon + 1);
  Matrix us(model.m(), horizon);
  Matrix ys(model.p(), horizon);
  states.col(0) = x;
  for (Eigen::Index t = 0; t < horizon; ++t) {
    Vector u;
    if (const auto* seq = std::get_if<Matrix>(&inputs)) {
      u = seq->col(t);
    } else if (const auto* fn = std::get_if<InputFn>(&inputs)) {
      u = (*fn)(t);
      if (u.size() != model.m()) throw ShapeError("simulate: input generator returned wrong size");
    } else {
      u = noise.input(model.m(), std::get<WhiteInput>(inputs).stddev);
    }
    const Vector xi = noise.process(model);
    const Vector eta = noise.measurement(model);
    StepResult r = step(model, x, u, xi, eta);
    us.col(t) = u;
    ys.col(t) = r.y;
    x = std::move(r.x_next);
    states.col(t + 1) = x;
  }
  return {Trajectory(model.dims(), us, ys), std::move(states), unstable};
}

Matrix stationary_state_cov(const StochasticLtiModel& model, double input_stddev) {
  const Matrix qc =
      input_stddev * input_stddev * model.b * model.b.transpose() + model.sigma_xi;
  return lyap_discrete(model.a, qc);
}

StochasticLtiModel default_benchmark(double process_std, double measurement_std) {
  StochasticLtiModel model;
  // Lightly damped oscillatory pair (|z| = 0.85) cascaded into a first-order lag.
  model.a.resize(3, 3);
  model.a << 0.8, 0.3, 0.0,
            -0.3, 0.8, 0.0,
             0.0, 0.4, 0.6;
  model.b.resize(3, 1);
  model.b << 0.0, 1.0, 0.5;
  model.c.resize(1, 3);
  model.c << 1.0, 0.0, 0.5;
  model.d = Matrix::Zero(1, 1);
  model.sigma_xi = process_std * process_std * Matrix::Identity(3, 3);
  model.sigma_eta = measurement_std * measurement_std * Matrix::Identity(1, 1);
  model.validate();
  return model;
}

StochasticLtiModel random_stable_model(Eigen::Index n, Eigen::Index m, Eigen::Index p,
                                       double radius, double process_std, double measurement_std,
                                       std::mt19937_64& gen) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    Matrix out(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) out(i, j) = normal(gen);
    return out;
  };
  StochasticLtiModel model;
  model.a = randn(n, n);
  const double rho = spectral_radius(model.a);
  if (rho > 0.0) model.a *= radius / rho;
  model.b = randn(n, m);
  model.c = randn(p, n);
  model.d = randn(p, m);
  model.sigma_xi = process_std * process_std * Matrix::Identity(n, n);
  model.sigma_eta = measurement_std * measurement_std * Matrix::Identity(p, p);
  model.validate();
  return model;
}

}  // namespace gbc
