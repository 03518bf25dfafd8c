// Command-line front end: identification, prediction, single-shot control,
// closed-loop runs, lambda sweeps and the verification suites.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "gbc/controllers.hpp"
#include "gbc/errors.hpp"
#include "gbc/gaussian_behavior.hpp"
#include "gbc/harness.hpp"
#include "gbc/log.hpp"
#include "gbc/trajectory_data.hpp"
#include "gbc/verify.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitConfig = 3;
constexpr int kExitVerification = 4;

struct Overrides {
  std::optional<double> rank_tol;
  std::optional<double> jitter;
  std::optional<double> eps_abs;
  std::string log_level = "warn";

  void apply(gbc::ExperimentConfig& cfg) const {
    if (rank_tol) cfg.rank_tol = *rank_tol;
    if (jitter) cfg.jitter_scale = *jitter;
    if (eps_abs) cfg.solver.eps_abs = *eps_abs;
    cfg.validate();
  }
};

json to_json(const Eigen::Ref<const gbc::Vector>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

gbc::ExperimentConfig load(const std::string& path, const Overrides& ov) {
  gbc::ExperimentConfig cfg = gbc::load_config(path);
  ov.apply(cfg);
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gbc::ConfigError("cannot write " + path.string());
  return out;
}

int cmd_identify(const std::string& data_path, const std::string& config_path,
                 const std::string& out_path, const Overrides& ov) {
  const gbc::ExperimentConfig cfg = load(config_path, ov);
  const gbc::Trajectory traj = gbc::load_csv(data_path, cfg.dims());
  const gbc::Matrix cols = gbc::window_trajectory(traj, cfg.l_ini + cfg.l_f, cfg.data.mode);
  const gbc::DataMatrix w = gbc::assemble(cols, cfg.dims(), cfg.l_ini, cfg.l_f);
  const gbc::GaussianBehavior gb = gbc::estimate(w, cfg.data.subtract_mean);
  std::ofstream out = open_out(out_path);
  out << gbc::behavior_to_json(gb).dump(2) << '\n';
  std::cerr << "identified behavior: L = " << gb.window_len << ", D = " << w.cols() << '\n';
  return kExitOk;
}

int cmd_predict(const std::string& behavior_path, const std::string& wini_path,
                const std::string& uf_path, const Overrides& ov) {
  std::ifstream bin(behavior_path);
  if (!bin) throw gbc::ConfigError("cannot open " + behavior_path);
  const gbc::GaussianBehavior gb = gbc::behavior_from_json(json::parse(bin)).interleaved();
  const gbc::SignalDims d = gb.dims;
  const gbc::Trajectory wini = gbc::load_csv(wini_path, d);
  std::ifstream uin(uf_path);
  if (!uin) throw gbc::ConfigError("cannot open " + uf_path);
  const gbc::Matrix uf = gbc::parse_table(uin, d.m);
  const Eigen::Index l_ini = wini.length();
  const Eigen::Index l_f = uf.cols();
  if (l_ini + l_f != gb.window_len) {
    throw gbc::ConfigError("predict: w_ini rows + u_f rows must equal the behavior length " +
                           std::to_string(gb.window_len));
  }
  std::vector<Eigen::Index> free;
  gbc::Vector value(d.q() * l_ini + d.m * l_f);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d.q() * l_ini; ++i, ++k) {
    free.push_back(i);
    value(k) = wini.samples().data()[i];
  }
  for (Eigen::Index t = 0; t < l_f; ++t) {
    for (int c = 0; c < d.m; ++c, ++k) {
      free.push_back((l_ini + t) * d.q() + c);
      value(k) = uf(c, t);
    }
  }
  const gbc::ConditionalGaussian cg =
      gbc::condition(gb, free, value, ov.rank_tol.value_or(gbc::kDefaultRankTol));
  std::cout << json{{"mean", to_json(cg.mean)}, {"cov_diag", to_json(cg.cov.diagonal())}}.dump(2)
            << '\n';
  return kExitOk;
}

int cmd_control(const std::string& config_path, const std::string& controller,
                std::optional<double> lambda, const Overrides& ov) {
  gbc::ExperimentConfig cfg = load(config_path, ov);
  if (!controller.empty()) cfg.control.controller = gbc::parse_controller(controller);
  if (lambda) {
    if (cfg.control.controller == gbc::ControllerKind::Deepc) {
      cfg.control.lambda_g = *lambda;
    } else {
      cfg.control.lambda = *lambda;
      cfg.control.lambda_auto = false;
    }
  }
  cfg.validate();
  const gbc::Identification id = gbc::identify(cfg);
  const gbc::Matrix& s = id.trajectory.samples();
  const gbc::Matrix tail = s.rightCols(cfg.l_ini);
  const gbc::Vector w_ini = Eigen::Map<const gbc::Vector>(tail.data(), tail.size());
  const gbc::ControlProblem cp = gbc::control_problem(cfg, 0);
  const gbc::ControlResult res = gbc::run_controller(cfg, id, w_ini, cp);
  json out{{"controller", gbc::to_string(cfg.control.controller)},
           {"u_f", to_json(res.u_f)},
           {"y_mean", to_json(res.y_pred.mean)},
           {"y_cov_diag", to_json(res.y_pred.cov.diagonal())},
           {"objective", res.objective},
           {"status", gbc::to_string(res.solver.status)},
           {"iterations", res.solver.iterations},
           {"polished", res.solver.polished},
           {"lambda_effective", res.lambda_effective}};
  if (cfg.control.controller == gbc::ControllerKind::Robust) {
    const gbc::LambdaThreshold t = gbc::lambda_threshold(id.pm, cp);
    out["lambda0"] = t.lambda0;
    out["lambda_psd"] = t.lambda_psd;
  }
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

int cmd_closed_loop(const std::string& config_path, const std::string& out_path,
                    std::optional<std::uint64_t> seed, const Overrides& ov) {
  const gbc::ExperimentConfig cfg = load(config_path, ov);
  const std::uint64_t run_seed = seed.value_or(cfg.run.seeds.front());
  const gbc::RunRecord rec = gbc::run_closed_loop(cfg, run_seed);
  {
    std::ofstream out = open_out(out_path);
    gbc::write_run_csv(rec, out);
  }
  fs::path summary_path = out_path;
  summary_path.replace_extension(".summary.json");
  {
    std::ofstream out = open_out(summary_path);
    out << gbc::run_summary(rec, cfg).dump(2) << '\n';
  }
  if (rec.aborted) {
    std::cerr << "closed-loop aborted after " << rec.steps.size() << " steps: " << rec.abort_reason
              << '\n';
    return kExitInfeasible;
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, std::vector<double> grid, const std::string& out_path,
              const Overrides& ov) {
  const gbc::ExperimentConfig cfg = load(config_path, ov);
  if (grid.empty()) grid = cfg.control.lambda_grid;
  if (grid.empty()) throw gbc::ConfigError("sweep: give --grid or control.lambda_grid");
  const std::vector<gbc::SweepCell> cells = gbc::sweep_lambda(cfg, grid);
  if (out_path.empty()) {
    gbc::write_sweep_csv(cells, std::cout);
  } else {
    std::ofstream out = open_out(out_path);
    gbc::write_sweep_csv(cells, out);
  }
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, bool inject_bug, bool as_json,
               const Overrides& ov) {
  gbc::VerifyOptions opt;
  opt.suite = suite;
  opt.seed = seed;
  opt.inject_bug = inject_bug;
  if (ov.rank_tol) opt.rank_tol = *ov.rank_tol;
  if (ov.jitter) opt.jitter_scale = *ov.jitter;
  if (ov.eps_abs) opt.solver.eps_abs = *ov.eps_abs;
  const std::vector<gbc::CheckResult> results = gbc::verify(opt);
  if (as_json) {
    std::cout << gbc::report_json(results).dump(2) << '\n';
  } else {
    gbc::print_report(results, std::cout);
  }
  return gbc::all_passed(results) ? kExitOk : kExitVerification;
}

gbc::log::Level parse_level(const std::string& name) {
  if (name == "debug") return gbc::log::Level::Debug;
  if (name == "info") return gbc::log::Level::Info;
  if (name == "warn") return gbc::log::Level::Warn;
  if (name == "error") return gbc::log::Level::Error;
  if (name == "off") return gbc::log::Level::Off;
  throw gbc::ConfigError("unknown log level '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-behavior identification and data-driven predictive control"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides ov;
  double rank_tol = 0.0, jitter = 0.0, eps_abs = 0.0;
  auto* rank_opt = app.add_option("--rank-tol", rank_tol, "Relative singular-value cutoff for pseudoinverses");
  auto* jitter_opt = app.add_option("--jitter", jitter, "Jitter scale: delta = scale * tr(S) / k");
  auto* eps_opt = app.add_option("--eps-abs", eps_abs, "QP absolute tolerance");
  app.add_option("--log-level", ov.log_level, "debug, info, warn, error or off");

  std::string data_path, config_path, out_path, behavior_path, wini_path, uf_path;
  std::string controller, suite = "all";
  std::vector<double> grid;
  std::uint64_t seed = 1;
  double lambda = 0.0;
  bool inject_bug = false, as_json = false;

  auto* identify = app.add_subcommand("identify", "Estimate a Gaussian behavior from a CSV record");
  identify->add_option("--data", data_path, "CSV with header u1..um,y1..yp")->required();
  identify->add_option("--config", config_path, "Experiment config (dims, horizons, data.mode)")->required();
  identify->add_option("--out", out_path, "Output behavior JSON")->required();

  auto* predict = app.add_subcommand("predict", "Condition a behavior on w_ini and u_f");
  predict->add_option("--behavior", behavior_path, "Behavior JSON from identify")->required();
  predict->add_option("--wini", wini_path, "CSV of the last L_ini samples (q columns)")->required();
  predict->add_option("--uf", uf_path, "CSV of the planned inputs (m columns)")->required();

  auto* control = app.add_subcommand("control", "Solve one control problem from the identification run");
  control->add_option("--config", config_path, "Experiment config")->required();
  control->add_option("--controller", controller, "spc, ce, deepc, optimistic or robust");
  auto* lambda_opt = control->add_option("--lambda", lambda, "lambda (lambda_g for deepc)");

  auto* closed = app.add_subcommand(
      "closed-loop",
      "Receding-horizon simulation. CSV columns: t, wini_1..wini_{qL_ini}, u_1..u_m, y_1..y_p, "
      "stage_cost, iterations, lambda_effective. A .summary.json is written next to the CSV.");
  closed->add_option("--config", config_path, "Experiment config")->required();
  closed->add_option("--out", out_path, "Output CSV")->required();
  auto* seed_opt = closed->add_option("--seed", seed, "Repetition seed (default: first of run.seeds)");

  auto* sweep = app.add_subcommand(
      "sweep", "Closed-loop cost over a lambda grid. CSV columns: lambda, mean_cost, std_cost, "
               "completed, failed.");
  sweep->add_option("--config", config_path, "Experiment config")->required();
  sweep->add_option("--grid", grid, "Ascending lambda values")->delimiter(',');
  sweep->add_option("--out", out_path, "Output CSV (default: stdout)");

  auto* verify = app.add_subcommand("verify", "Run the numerical certification suites");
  verify->add_option("--suite", suite, "all, lemmas, theorems or solver");
  verify->add_option("--seed", seed, "Seed for the random instances");
  verify->add_flag("--inject-bug", inject_bug,
                   "Flip a sign in the predictive covariance; the DeePC/optimistic check must fail");
  verify->add_flag("--json", as_json, "Machine-readable report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    gbc::log::set_level(parse_level(ov.log_level));
    if (*rank_opt) ov.rank_tol = rank_tol;
    if (*jitter_opt) ov.jitter = jitter;
    if (*eps_opt) ov.eps_abs = eps_abs;
    if (*identify) return cmd_identify(data_path, config_path, out_path, ov);
    if (*predict) return cmd_predict(behavior_path, wini_path, uf_path, ov);
    if (*control) {
      return cmd_control(config_path, controller,
                         *lambda_opt ? std::optional<double>(lambda) : std::nullopt, ov);
    }
    if (*closed) {
      return cmd_closed_loop(config_path, out_path,
                             *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt, ov);
    }
    if (*sweep) return cmd_sweep(config_path, grid, out_path, ov);
    if (*verify) return cmd_verify(suite, seed, inject_bug, as_json, ov);
  } catch (const gbc::Infeasible& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const gbc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const gbc::LambdaTooSmall& e) {
    std::cerr << "config error: " << e.what() << " (threshold " << e.threshold() << ")\n";
    return kExitConfig;
  } catch (const gbc::ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const gbc::TooShort& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
