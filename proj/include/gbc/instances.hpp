#pragma once

// Random control instances built from simulated plant data. Shared by the
// verification suites, the tests and the benchmarks.

#include <cstdint>
#include <random>

#include "gbc/controllers.hpp"
#include "gbc/lti_plant.hpp"

namespace gbc {

struct InstanceOptions {
  int max_states = 4;
  int max_inputs = 2;
  int max_outputs = 2;
  int max_l_ini = 3;
  int max_l_f = 6;
  double radius = 0.9;
  double process_std = 0.05;
  double measurement_std = 0.1;
  /// D is drawn uniformly from [min_cols_factor * qL, max_cols_factor * qL].
  double min_cols_factor = 1.0;
  double max_cols_factor = 5.0;
  bool input_box = false;
};

struct ControlInstance {
  StochasticLtiModel model;
  DataMatrix data;
  PredictiveModel pm;
  ControlProblem cp;
  Vector w_ini;
};

/// Random plant, Hankel data with D columns, random diagonal weights and
/// references, and w_ini from an independent run of the same plant. With
/// `input_box` the bounds are set to a fraction of the unconstrained SPC
/// input so that some of them bind.
ControlInstance random_instance(std::mt19937_64& gen, const InstanceOptions& options);

/// Noiseless data from `model` with white input, L_ini >= n so the initial
/// window fixes the state.
DataMatrix noiseless_data(const StochasticLtiModel& model, int l_ini, int l_f, Eigen::Index cols,
                          std::uint64_t seed);

}  // namespace gbc
