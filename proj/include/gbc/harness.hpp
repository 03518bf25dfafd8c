#pragma once

// Experiment orchestration: configuration, identification data, the
// receding-horizon loop, lambda sweeps, and CSV / JSON emission.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbc/controllers.hpp"
#include "gbc/gaussian_behavior.hpp"
#include "gbc/lti_plant.hpp"

namespace gbc {

inline constexpr int kConfigSchema = 1;

enum class ControllerKind { Spc, Ce, Deepc, Optimistic, Robust };

std::string to_string(ControllerKind kind);
ControllerKind parse_controller(const std::string& name);

struct DataConfig {
  Eigen::Index length = 400;  ///< samples in the identification run
  WindowMode mode = WindowMode::Hankel;
  double input_std = 1.0;
  std::uint64_t seed = 1;
  bool subtract_mean = false;
};

/// Output reference switching to `value` from step `from` on.
struct ReferenceStep {
  Eigen::Index from = 0;
  Vector value;
};

struct ControlConfig {
  ControllerKind controller = ControllerKind::Spc;
  Vector q_step;  ///< p diagonal entries of the per-step output weight
  Vector r_step;  ///< m diagonal entries of the per-step input weight
  Vector u_ref;   ///< per step, m
  Vector y_ref;   ///< per step, p
  std::vector<ReferenceStep> y_ref_schedule;
  Vector u_lower, u_upper;  ///< per step
  std::optional<std::pair<Vector, Vector>> y_box;
  double lambda = 1.0;
  bool lambda_auto = false;  ///< robust: use 2 * lambda_psd
  double lambda_g = 1.0;
  Regularizer regularizer = Regularizer::Proj2;
  std::vector<double> lambda_grid;
};

struct RunConfig {
  Eigen::Index steps = 50;
  std::vector<std::uint64_t> seeds{1};
  int apply_steps = 1;
  Vector x0;  ///< empty means the zero state
  double warmup_input_std = 1.0;
};

struct ExperimentConfig {
  StochasticLtiModel plant;
  DataConfig data;
  int l_ini = 3;
  int l_f = 5;
  ControlConfig control;
  RunConfig run;
  QpSettings solver;
  double rank_tol = kDefaultRankTol;
  double jitter_scale = kDefaultJitterScale;

  SignalDims dims() const { return plant.dims(); }
  /// Throws ConfigError unless every dimension is consistent.
  void validate() const;
};

/// Parses a schema-1 config. Relative `plant_file` paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& doc,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json model_to_json(const StochasticLtiModel& model);
StochasticLtiModel model_from_json(const nlohmann::json& doc);

nlohmann::json behavior_to_json(const GaussianBehavior& gb);
GaussianBehavior behavior_from_json(const nlohmann::json& doc);

/// The identification run, its data matrix and the frozen predictive model.
struct Identification {
  Trajectory trajectory;
  DataMatrix data;
  PredictiveModel pm;
};

Identification identify(const ExperimentConfig& cfg);

/// Control problem at closed-loop step t, with references over [t, t + L_f).
ControlProblem control_problem(const ExperimentConfig& cfg, Eigen::Index t);

/// Runs the configured controller once.
ControlResult run_controller(const ExperimentConfig& cfg, const Identification& id,
                             const Eigen::Ref<const Vector>& w_ini, const ControlProblem& cp);

struct StepRecord {
  Eigen::Index t = 0;
  Vector w_ini;
  Vector u;
  Vector y;
  double stage_cost = 0.0;
  int iterations = 0;
  double lambda_effective = 0.0;
};

struct RunRecord {
  SignalDims dims;
  std::uint64_t seed = 0;
  Trajectory warmup;
  std::vector<StepRecord> steps;
  double realized_cost = 0.0;  ///< sum of stage costs
  bool aborted = false;
  std::string abort_reason;
};

/// Receding-horizon loop for one repetition seed. Controller infeasibility
/// aborts the run and returns the partial record.
RunRecord run_closed_loop(const ExperimentConfig& cfg, const Identification& id,
                          std::uint64_t run_seed);
RunRecord run_closed_loop(const ExperimentConfig& cfg, std::uint64_t run_seed);

/// Columns: t, wini_1..wini_{qL_ini}, u_1..u_m, y_1..y_p, stage_cost,
/// iterations, lambda_effective.
void write_run_csv(const RunRecord& rec, std::ostream& out);
nlohmann::json run_summary(const RunRecord& rec, const ExperimentConfig& cfg);

struct SweepCell {
  double lambda = 0.0;
  Eigen::Index completed = 0;
  Eigen::Index failed = 0;
  double mean_cost = 0.0;  ///< NaN when no repetition completed
  double std_cost = 0.0;
};

/// Closed-loop cost over cfg.run.seeds for each grid value. The value sets
/// lambda_g for deepc and lambda for optimistic / robust. Throws ConfigError
/// for an unsorted grid.
std::vector<SweepCell> sweep_lambda(const ExperimentConfig& cfg, const std::vector<double>& grid);

/// Columns: lambda, mean_cost, std_cost, completed, failed.
void write_sweep_csv(const std::vector<SweepCell>& cells, std::ostream& out);

}  // namespace gbc
