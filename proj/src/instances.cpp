#include "gbc/instances.hpp"

#include <algorithm>
#include <cmath>

#include "gbc/gaussian_behavior.hpp"

namespace gbc {

namespace {

int uniform_int(std::mt19937_64& gen, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(gen);
}

Vector uniform_vector(std::mt19937_64& gen, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(gen);
  return v;
}

}  // namespace

ControlInstance random_instance(std::mt19937_64& gen, const InstanceOptions& opt) {
  const int n = uniform_int(gen, 1, opt.max_states);
  const int m = uniform_int(gen, 1, opt.max_inputs);
  const int p = uniform_int(gen, 1, opt.max_outputs);
  const int l_ini = uniform_int(gen, 1, opt.max_l_ini);
  const int l_f = uniform_int(gen, 1, opt.max_l_f);
  StochasticLtiModel model =
      random_stable_model(n, m, p, opt.radius, opt.process_std, opt.measurement_std, gen);

  const SignalDims dims = model.dims();
  const Eigen::Index ql = Eigen::Index{dims.q()} * (l_ini + l_f);
  const auto lo = static_cast<Eigen::Index>(std::ceil(opt.min_cols_factor * static_cast<double>(ql)));
  const auto hi = static_cast<Eigen::Index>(std::floor(opt.max_cols_factor * static_cast<double>(ql)));
  const Eigen::Index cols =
      std::uniform_int_distribution<Eigen::Index>(lo, std::max(lo, hi))(gen);

  const std::uint64_t data_seed = gen();
  const Matrix sx = stationary_state_cov(model, 1.0);
  const Simulation sim = simulate(model, GaussianState{Vector::Zero(n), sx}, WhiteInput{1.0},
                                  cols + ql / dims.q() - 1, data_seed);
  DataMatrix data = assemble(window_trajectory(sim.trajectory, l_ini + l_f, WindowMode::Hankel),
                             dims, l_ini, l_f);
  PredictiveModel pm = predictive_model(data);

  const Simulation init = simulate(model, GaussianState{Vector::Zero(n), sx}, WhiteInput{1.0},
                                   l_ini, gen());
  Vector w_ini = init.trajectory.window(0, l_ini);

  ControlProblem cp = ControlProblem::make(dims, l_ini, l_f);
  cp.q = uniform_vector(gen, Eigen::Index{p} * l_f, 0.5, 2.0).asDiagonal();
  cp.r = uniform_vector(gen, Eigen::Index{m} * l_f, 0.05, 0.5).asDiagonal();
  cp.u_ref = uniform_vector(gen, Eigen::Index{m} * l_f, -0.5, 0.5);
  cp.y_ref = uniform_vector(gen, Eigen::Index{p} * l_f, -2.0, 2.0);
  if (opt.input_box) {
    const ControlResult free = spc(pm, w_ini, cp);
    const double bound = std::max(0.05, 0.5 * free.u_f.cwiseAbs().maxCoeff());
    cp.u_box = Box::repeat(Vector::Constant(m, -bound), Vector::Constant(m, bound), l_f);
  }
  return {std::move(model), std::move(data), std::move(pm), std::move(cp), std::move(w_ini)};
}

DataMatrix noiseless_data(const StochasticLtiModel& model, int l_ini, int l_f, Eigen::Index cols,
                          std::uint64_t seed) {
  StochasticLtiModel clean = model;
  clean.sigma_xi.setZero();
  clean.sigma_eta.setZero();
  const Eigen::Index len = l_ini + l_f;
  const Matrix sx = stationary_state_cov(clean, 1.0);
  const Simulation sim = simulate(clean, GaussianState{Vector::Zero(clean.n()), sx},
                                  WhiteInput{1.0}, cols + len - 1, seed);
  return assemble(window_trajectory(sim.trajectory, len, WindowMode::Hankel), clean.dims(), l_ini,
                  l_f);
}

}  // namespace gbc
