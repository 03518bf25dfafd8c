#include "gbc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "gbc/errors.hpp"
#include "gbc/log.hpp"

namespace gbc {

using nlohmann::json;

std::string to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::Spc: return "spc";
    case ControllerKind::Ce: return "ce";
    case ControllerKind::Deepc: return "deepc";
    case ControllerKind::Optimistic: return "optimistic";
    case ControllerKind::Robust: return "robust";
  }
  return "unknown";
}

ControllerKind parse_controller(const std::string& name) {
  if (name == "spc") return ControllerKind::Spc;
  if (name == "ce") return ControllerKind::Ce;
  if (name == "deepc") return ControllerKind::Deepc;
  if (name == "optimistic") return ControllerKind::Optimistic;
  if (name == "robust") return ControllerKind::Robust;
  throw ConfigError("unknown controller '" + name +
                    "' (expected spc, ce, deepc, optimistic or robust)");
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw ConfigError(what + ": expected a number");
  return j.get<double>();
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array()) throw ConfigError(what + ": expected a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) throw ConfigError(what + ": empty matrix");
  if (!j[0].is_array()) throw ConfigError(what + ": expected an array of rows");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(what + ": ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      out(r, c) = number(row[static_cast<std::size_t>(c)], what);
    }
  }
  return out;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], what);
  return v;
}

json vector_to_json(const Eigen::Ref<const Vector>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// A scalar broadcast to n entries, or an array of exactly n entries.
Vector per_step(const json& j, Eigen::Index n, const std::string& what) {
  if (j.is_number()) return Vector::Constant(n, j.get<double>());
  Vector v = vector_from_json(j, what);
  if (v.size() != n) {
    throw ConfigError(what + ": expected " + std::to_string(n) + " entries, got " +
                      std::to_string(v.size()));
  }
  return v;
}

/// [lo, hi] scalars or {"lower": ..., "upper": ...}; null entries are unbounded.
std::pair<Vector, Vector> box_from_json(const json& j, Eigen::Index n, const std::string& what) {
  auto bound = [&](const json& b, double inf) {
    return b.is_null() ? Vector::Constant(n, inf) : per_step(b, n, what);
  };
  if (j.is_array() && j.size() == 2 && (j[0].is_number() || j[0].is_null()) &&
      (j[1].is_number() || j[1].is_null())) {
    return {bound(j[0], -kInfinity), bound(j[1], kInfinity)};
  }
  if (j.is_object()) {
    reject_unknown(j, {"lower", "upper"}, what);
    return {bound(j.value("lower", json()), -kInfinity), bound(j.value("upper", json()), kInfinity)};
  }
  throw ConfigError(what + ": expected [lower, upper] or {\"lower\", \"upper\"}");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

nlohmann::json model_to_json(const StochasticLtiModel& model) {
  return json{{"A", matrix_to_json(model.a)},
              {"B", matrix_to_json(model.b)},
              {"C", matrix_to_json(model.c)},
              {"D", matrix_to_json(model.d)},
              {"Sigma_xi", matrix_to_json(model.sigma_xi)},
              {"Sigma_eta", matrix_to_json(model.sigma_eta)}};
}

StochasticLtiModel model_from_json(const json& doc) {
  reject_unknown(doc, {"A", "B", "C", "D", "Sigma_xi", "Sigma_eta"}, "plant");
  for (const char* key : {"A", "B", "C"}) {
    if (!doc.contains(key)) throw ConfigError(std::string("plant: missing '") + key + "'");
  }
  StochasticLtiModel m;
  m.a = matrix_from_json(doc["A"], "plant.A");
  m.b = matrix_from_json(doc["B"], "plant.B");
  m.c = matrix_from_json(doc["C"], "plant.C");
  m.d = doc.contains("D") ? matrix_from_json(doc["D"], "plant.D") : Matrix::Zero(m.p(), m.m());
  m.sigma_xi = doc.contains("Sigma_xi") ? matrix_from_json(doc["Sigma_xi"], "plant.Sigma_xi")
                                        : Matrix::Zero(m.n(), m.n());
  m.sigma_eta = doc.contains("Sigma_eta") ? matrix_from_json(doc["Sigma_eta"], "plant.Sigma_eta")
                                          : Matrix::Zero(m.p(), m.p());
  try {
    m.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("plant: ") + e.what());
  }
  return m;
}

nlohmann::json behavior_to_json(const GaussianBehavior& gb) {
  json cov = json::array();
  for (Eigen::Index r = 0; r < gb.cov.rows(); ++r) {
    for (Eigen::Index c = 0; c < gb.cov.cols(); ++c) cov.push_back(gb.cov(r, c));
  }
  return json{{"schema", kConfigSchema},
              {"dims", {{"m", gb.dims.m}, {"p", gb.dims.p}}},
              {"L", gb.window_len},
              {"mean", vector_to_json(gb.mean)},
              {"cov", std::move(cov)},
              {"ordering", to_string(gb.ordering)}};
}

GaussianBehavior behavior_from_json(const json& doc) {
  reject_unknown(doc, {"schema", "dims", "L", "mean", "cov", "ordering"}, "behavior");
  if (doc.value("schema", 0) != kConfigSchema) throw ConfigError("behavior: unsupported schema");
  GaussianBehavior gb;
  const json& dims = doc.at("dims");
  gb.dims = {dims.at("m").get<int>(), dims.at("p").get<int>()};
  gb.window_len = doc.at("L").get<Eigen::Index>();
  gb.mean = vector_from_json(doc.at("mean"), "behavior.mean");
  const Vector flat = vector_from_json(doc.at("cov"), "behavior.cov");
  const Eigen::Index k = gb.mean.size();
  if (flat.size() != k * k) throw ConfigError("behavior: cov must have (qL)^2 entries");
  gb.cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), k, k);
  gb.ordering = parse_ordering(doc.value("ordering", std::string("interleaved")));
  gb.validate();
  return gb;
}

void ExperimentConfig::validate() const {
  try {
    plant.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("plant: ") + e.what());
  }
  const SignalDims d = dims();
  const auto m = Eigen::Index{d.m};
  const auto p = Eigen::Index{d.p};
  if (l_ini < 1 || l_f < 1) throw ConfigError("horizons: L_ini and L_f must be >= 1");
  const Eigen::Index len = l_ini + l_f;
  if (data.length < len) throw ConfigError("data.T must be at least L_ini + L_f");
  if (!(data.input_std >= 0.0)) throw ConfigError("data.input_std must be >= 0");
  const ControlConfig& c = control;
  if (c.q_step.size() != p) throw ConfigError("control.Q must have p entries");
  if (c.r_step.size() != m) throw ConfigError("control.R must have m entries");
  if ((c.q_step.array() < 0.0).any()) throw ConfigError("control.Q must be >= 0");
  if ((c.r_step.array() <= 0.0).any()) throw ConfigError("control.R must be > 0");
  if (c.u_ref.size() != m || c.y_ref.size() != p) throw ConfigError("control references: bad size");
  if (c.u_lower.size() != m || c.u_upper.size() != m) throw ConfigError("control.u_box: bad size");
  if ((c.u_lower.array() > c.u_upper.array()).any()) throw ConfigError("control.u_box: lower > upper");
  for (const ReferenceStep& s : c.y_ref_schedule) {
    if (s.value.size() != p) throw ConfigError("control.y_ref_schedule: value must have p entries");
    if (s.from < 0) throw ConfigError("control.y_ref_schedule: 'from' must be >= 0");
  }
  if (c.y_box) {
    if (c.y_box->first.size() != p || c.y_box->second.size() != p) {
      throw ConfigError("control.y_box: bad size");
    }
    if ((c.y_box->first.array() > c.y_box->second.array()).any()) {
      throw ConfigError("control.y_box: lower > upper");
    }
    if (c.controller == ControllerKind::Robust) {
      throw ConfigError("control.y_box is not supported by the robust controller");
    }
  }
  if (c.lambda_auto && c.controller != ControllerKind::Robust) {
    throw ConfigError("control.lambda = \"auto\" is only defined for the robust controller");
  }
  if (!c.lambda_auto && !(c.lambda > 0.0)) throw ConfigError("control.lambda must be > 0");
  if (!(c.lambda_g >= 0.0)) throw ConfigError("control.lambda_g must be >= 0");
  if (run.steps < 0) throw ConfigError("run.steps must be >= 0");
  if (run.seeds.empty()) throw ConfigError("run.seeds must not be empty");
  if (run.apply_steps < 1 || run.apply_steps > l_f) {
    throw ConfigError("run.apply_steps must lie in [1, L_f]");
  }
  if (run.x0.size() != 0 && run.x0.size() != plant.n()) throw ConfigError("run.x0 must have n entries");
  if (!(run.warmup_input_std >= 0.0)) throw ConfigError("run.warmup_input_std must be >= 0");
  if (!(rank_tol > 0.0 && rank_tol < 1.0)) throw ConfigError("rank_tol must lie in (0, 1)");
  if (!(jitter_scale > 0.0)) throw ConfigError("jitter must be > 0");
  if (!(solver.eps_abs > 0.0) || !(solver.eps_rel >= 0.0) || solver.max_iter < 1) {
    throw ConfigError("solver: invalid tolerances or max_iter");
  }
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  reject_unknown(doc, {"schema", "plant", "plant_file", "data", "horizons", "control", "run",
                       "solver", "rank_tol", "jitter"},
                 "config");
  if (!doc.contains("schema") || doc["schema"] != kConfigSchema) {
    throw ConfigError("config: \"schema\": 1 is required");
  }
  ExperimentConfig cfg;

  if (doc.contains("plant") && doc.contains("plant_file")) {
    throw ConfigError("config: give either 'plant' or 'plant_file', not both");
  }
  if (doc.contains("plant_file")) {
    std::filesystem::path file = doc["plant_file"].get<std::string>();
    if (file.is_relative()) file = base_dir / file;
    std::ifstream in(file);
    if (!in) throw ConfigError("config: cannot open plant_file " + file.string());
    json plant;
    try {
      plant = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("plant_file: " + std::string(e.what()));
    }
    cfg.plant = model_from_json(plant);
  } else if (doc.contains("plant") && !(doc["plant"].is_string() && doc["plant"] == "default") &&
             !(doc["plant"].is_object() && doc["plant"].contains("benchmark"))) {
    cfg.plant = model_from_json(doc["plant"]);
  } else {
    double process_std = 0.01;
    double measurement_std = 0.05;
    if (doc.contains("plant") && doc["plant"].is_object()) {
      reject_unknown(doc["plant"], {"benchmark"}, "plant");
      const json& b = doc["plant"]["benchmark"];
      reject_unknown(b, {"process_std", "measurement_std"}, "plant.benchmark");
      process_std = b.value("process_std", process_std);
      measurement_std = b.value("measurement_std", measurement_std);
    }
    cfg.plant = default_benchmark(process_std, measurement_std);
  }
  const auto m = cfg.plant.m();
  const auto p = cfg.plant.p();

  if (doc.contains("data")) {
    const json& d = doc["data"];
    reject_unknown(d, {"T", "mode", "input_std", "seed", "subtract_mean"}, "data");
    cfg.data.length = d.value("T", cfg.data.length);
    cfg.data.mode = parse_window_mode(d.value("mode", std::string("hankel")));
    cfg.data.input_std = d.value("input_std", cfg.data.input_std);
    cfg.data.seed = d.value("seed", cfg.data.seed);
    cfg.data.subtract_mean = d.value("subtract_mean", cfg.data.subtract_mean);
  }
  if (doc.contains("horizons")) {
    const json& h = doc["horizons"];
    reject_unknown(h, {"L_ini", "L_f"}, "horizons");
    cfg.l_ini = h.value("L_ini", cfg.l_ini);
    cfg.l_f = h.value("L_f", cfg.l_f);
  }

  ControlConfig& c = cfg.control;
  c.q_step = Vector::Ones(p);
  c.r_step = Vector::Constant(m, 0.1);
  c.u_ref = Vector::Zero(m);
  c.y_ref = Vector::Zero(p);
  c.u_lower = Vector::Constant(m, -kInfinity);
  c.u_upper = Vector::Constant(m, kInfinity);
  if (doc.contains("control")) {
    const json& j = doc["control"];
    reject_unknown(j, {"controller", "Q", "R", "u_ref", "y_ref", "y_ref_schedule", "u_box", "y_box",
                       "lambda", "lambda_g", "regularizer", "lambda_grid"},
                   "control");
    if (j.contains("controller")) c.controller = parse_controller(j["controller"].get<std::string>());
    if (j.contains("Q")) c.q_step = per_step(j["Q"], p, "control.Q");
    if (j.contains("R")) c.r_step = per_step(j["R"], m, "control.R");
    if (j.contains("u_ref")) c.u_ref = per_step(j["u_ref"], m, "control.u_ref");
    if (j.contains("y_ref")) c.y_ref = per_step(j["y_ref"], p, "control.y_ref");
    if (j.contains("y_ref_schedule")) {
      for (const json& s : j["y_ref_schedule"]) {
        reject_unknown(s, {"from", "value"}, "control.y_ref_schedule");
        c.y_ref_schedule.push_back(
            {s.at("from").get<Eigen::Index>(), per_step(s.at("value"), p, "control.y_ref_schedule")});
      }
      std::stable_sort(c.y_ref_schedule.begin(), c.y_ref_schedule.end(),
                       [](const ReferenceStep& a, const ReferenceStep& b) { return a.from < b.from; });
    }
    if (j.contains("u_box")) std::tie(c.u_lower, c.u_upper) = box_from_json(j["u_box"], m, "control.u_box");
    if (j.contains("y_box") && !j["y_box"].is_null()) c.y_box = box_from_json(j["y_box"], p, "control.y_box");
    if (j.contains("lambda")) {
      if (j["lambda"].is_string()) {
        if (j["lambda"] != "auto") throw ConfigError("control.lambda: expected a number or \"auto\"");
        c.lambda_auto = true;
      } else {
        c.lambda = number(j["lambda"], "control.lambda");
      }
    }
    if (j.contains("lambda_g")) c.lambda_g = number(j["lambda_g"], "control.lambda_g");
    if (j.contains("regularizer")) c.regularizer = parse_regularizer(j["regularizer"].get<std::string>());
    if (j.contains("lambda_grid")) {
      for (const json& v : j["lambda_grid"]) c.lambda_grid.push_back(number(v, "control.lambda_grid"));
    }
  }

  if (doc.contains("run")) {
    const json& r = doc["run"];
    reject_unknown(r, {"steps", "seeds", "apply_steps", "x0", "warmup_input_std"}, "run");
    cfg.run.steps = r.value("steps", cfg.run.steps);
    if (r.contains("seeds")) cfg.run.seeds = r["seeds"].get<std::vector<std::uint64_t>>();
    cfg.run.apply_steps = r.value("apply_steps", cfg.run.apply_steps);
    if (r.contains("x0")) cfg.run.x0 = vector_from_json(r["x0"], "run.x0");
    cfg.run.warmup_input_std = r.value("warmup_input_std", cfg.data.input_std);
  } else {
    cfg.run.warmup_input_std = cfg.data.input_std;
  }

  if (doc.contains("solver")) {
    const json& s = doc["solver"];
    reject_unknown(s, {"eps_abs", "eps_rel", "max_iter", "rho", "sigma", "alpha", "polish",
                       "adaptive_rho", "check_every", "scaling_iters", "eps_infeasible"},
                   "solver");
    QpSettings& q = cfg.solver;
    q.eps_abs = s.value("eps_abs", q.eps_abs);
    q.eps_rel = s.value("eps_rel", q.eps_rel);
    q.max_iter = s.value("max_iter", q.max_iter);
    q.rho = s.value("rho", q.rho);
    q.sigma = s.value("sigma", q.sigma);
    q.alpha = s.value("alpha", q.alpha);
    q.polish = s.value("polish", q.polish);
    q.adaptive_rho = s.value("adaptive_rho", q.adaptive_rho);
    q.check_every = s.value("check_every", q.check_every);
    q.scaling_iters = s.value("scaling_iters", q.scaling_iters);
    q.eps_infeasible = s.value("eps_infeasible", q.eps_infeasible);
  }
  cfg.rank_tol = doc.value("rank_tol", cfg.rank_tol);
  cfg.jitter_scale = doc.value("jitter", cfg.jitter_scale);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  try {
    return parse_config(doc, path.parent_path());
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

Identification identify(const ExperimentConfig& cfg) {
  const StochasticLtiModel& plant = cfg.plant;
  const Eigen::Index len = cfg.l_ini + cfg.l_f;
  Trajectory traj(plant.dims(), Matrix::Zero(plant.dims().q(), 1));
  try {
    const Matrix sx = stationary_state_cov(plant, cfg.data.input_std);
    traj = simulate(plant, GaussianState{Vector::Zero(plant.n()), sx}, WhiteInput{cfg.data.input_std},
                    cfg.data.length, cfg.data.seed)
               .trajectory;
  } catch (const UnstableSystem&) {
    // No stationary law: start at rest and discard a burn-in of 10 n samples.
    const Eigen::Index burn = 10 * plant.n();
    log::warn("identify: plant has no stationary distribution, using a burn-in run");
    const Simulation sim = simulate(plant, Vector(Vector::Zero(plant.n())),
                                    WhiteInput{cfg.data.input_std}, cfg.data.length + burn,
                                    cfg.data.seed);
    traj = Trajectory(plant.dims(), sim.trajectory.samples().rightCols(cfg.data.length));
  }
  DataMatrix data = assemble(window_trajectory(traj, len, cfg.data.mode), plant.dims(), cfg.l_ini,
                             cfg.l_f);
  PredictiveModel pm = predictive_model(data, cfg.rank_tol);
  return {std::move(traj), std::move(data), std::move(pm)};
}

ControlProblem control_problem(const ExperimentConfig& cfg, Eigen::Index t) {
  const ControlConfig& c = cfg.control;
  const Eigen::Index lf = cfg.l_f;
  ControlProblem cp;
  cp.dims = cfg.dims();
  cp.l_ini = cfg.l_ini;
  cp.l_f = cfg.l_f;
  cp.q = Matrix(c.q_step.replicate(lf, 1).asDiagonal());
  cp.r = Matrix(c.r_step.replicate(lf, 1).asDiagonal());
  cp.u_ref = c.u_ref.replicate(lf, 1);
  cp.y_ref.resize(c.y_ref.size() * lf);
  for (Eigen::Index k = 0; k < lf; ++k) {
    Vector ref = c.y_ref;
    for (const ReferenceStep& s : c.y_ref_schedule) {
      if (s.from <= t + k) ref = s.value;
    }
    cp.y_ref.segment(k * ref.size(), ref.size()) = ref;
  }
  cp.u_box = Box::repeat(c.u_lower, c.u_upper, lf);
  if (c.y_box) cp.y_box = Box::repeat(c.y_box->first, c.y_box->second, lf);
  cp.solver = cfg.solver;
  cp.rank_tol = cfg.rank_tol;
  cp.jitter_scale = cfg.jitter_scale;
  return cp;
}

ControlResult run_controller(const ExperimentConfig& cfg, const Identification& id,
                             const Eigen::Ref<const Vector>& w_ini, const ControlProblem& cp) {
  const ControlConfig& c = cfg.control;
  switch (c.controller) {
    case ControllerKind::Spc: return spc(id.pm, w_ini, cp);
    case ControllerKind::Ce: return certainty_equivalence(id.pm, w_ini, cp);
    case ControllerKind::Deepc: return deepc(id.data, w_ini, cp, c.regularizer, c.lambda_g);
    case ControllerKind::Optimistic: return optimistic(id.pm, w_ini, cp, c.lambda);
    case ControllerKind::Robust: {
      double lambda = c.lambda;
      if (c.lambda_auto) {
        const double psd = lambda_threshold(id.pm, cp).lambda_psd;
        lambda = psd > 0.0 ? 2.0 * psd : 1.0;
      }
      return robust(id.pm, w_ini, cp, lambda);
    }
  }
  throw ConfigError("unknown controller");
}

RunRecord run_closed_loop(const ExperimentConfig& cfg, const Identification& id,
                          std::uint64_t run_seed) {
  cfg.validate();
  const StochasticLtiModel& plant = cfg.plant;
  const SignalDims dims = plant.dims();
  const Eigen::Index m = dims.m;
  const Eigen::Index p = dims.p;
  const Eigen::Index q = dims.q();
  NoiseStreams noise(mix_seed(cfg.data.seed, run_seed));

  Vector x = cfg.run.x0.size() ? cfg.run.x0 : Vector::Zero(plant.n());
  auto advance = [&](const Vector& u) {
    const Vector xi = noise.process(plant);
    const Vector eta = noise.measurement(plant);
    StepResult s = step(plant, x, u, xi, eta);
    x = std::move(s.x_next);
    return s.y;
  };

  RunRecord rec{dims, run_seed, Trajectory(dims, Matrix::Zero(q, 1)), {}, 0.0, false, {}};
  Matrix history(q, cfg.l_ini);
  for (int k = 0; k < cfg.l_ini; ++k) {
    const Vector u = noise.input(m, cfg.run.warmup_input_std);
    history.col(k) << u, advance(u);
  }
  rec.warmup = Trajectory(dims, history);

  const ControlConfig& c = cfg.control;
  Eigen::Index t = 0;
  while (t < cfg.run.steps) {
    const Vector w_ini = Eigen::Map<const Vector>(history.data(), history.size());
    const ControlProblem cp = control_problem(cfg, t);
    ControlResult res;
    try {
      res = run_controller(cfg, id, w_ini, cp);
    } catch (const Infeasible& e) {
      rec.aborted = true;
      rec.abort_reason = e.what();
      break;
    }
    const Eigen::Index apply = std::min<Eigen::Index>(cfg.run.apply_steps, cfg.run.steps - t);
    for (Eigen::Index k = 0; k < apply; ++k, ++t) {
      const Vector u = res.u_f.segment(k * m, m);
      const Vector y = advance(u);
      const Vector du = u - c.u_ref;
      const Vector dy = y - cp.y_ref.segment(k * p, p);
      StepRecord s;
      s.t = t;
      s.w_ini = Eigen::Map<const Vector>(history.data(), history.size());
      s.u = u;
      s.y = y;
      s.stage_cost = du.dot(c.r_step.cwiseProduct(du)) + dy.dot(c.q_step.cwiseProduct(dy));
      s.iterations = res.solver.iterations;
      s.lambda_effective = res.lambda_effective;
      rec.realized_cost += s.stage_cost;
      rec.steps.push_back(std::move(s));
      if (cfg.l_ini > 1) {
        history.leftCols(cfg.l_ini - 1) = history.rightCols(cfg.l_ini - 1).eval();
      }
      history.col(cfg.l_ini - 1) << u, y;
    }
  }
  return rec;
}

RunRecord run_closed_loop(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  return run_closed_loop(cfg, identify(cfg), run_seed);
}

void write_run_csv(const RunRecord& rec, std::ostream& out) {
  const Eigen::Index wini = rec.warmup.samples().size();
  out << "t";
  for (Eigen::Index i = 1; i <= wini; ++i) out << ",wini_" << i;
  for (int i = 1; i <= rec.dims.m; ++i) out << ",u_" << i;
  for (int i = 1; i <= rec.dims.p; ++i) out << ",y_" << i;
  out << ",stage_cost,iterations,lambda_effective\n";
  for (const StepRecord& s : rec.steps) {
    out << s.t;
    for (Eigen::Index i = 0; i < s.w_ini.size(); ++i) out << ',' << format_double(s.w_ini(i));
    for (Eigen::Index i = 0; i < s.u.size(); ++i) out << ',' << format_double(s.u(i));
    for (Eigen::Index i = 0; i < s.y.size(); ++i) out << ',' << format_double(s.y(i));
    out << ',' << format_double(s.stage_cost) << ',' << s.iterations << ','
        << format_double(s.lambda_effective) << '\n';
  }
}

nlohmann::json run_summary(const RunRecord& rec, const ExperimentConfig& cfg) {
  return json{{"schema", kConfigSchema},
              {"controller", to_string(cfg.control.controller)},
              {"seed", rec.seed},
              {"steps", rec.steps.size()},
              {"realized_cost", rec.realized_cost},
              {"aborted", rec.aborted},
              {"abort_reason", rec.abort_reason}};
}

std::vector<SweepCell> sweep_lambda(const ExperimentConfig& cfg, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("sweep: grid must be ascending");
  const ControllerKind kind = cfg.control.controller;
  if (kind == ControllerKind::Spc || kind == ControllerKind::Ce) {
    throw ConfigError("sweep: controller " + to_string(kind) + " has no lambda");
  }
  const Identification id = identify(cfg);
  std::vector<SweepCell> cells;
  for (double lambda : grid) {
    ExperimentConfig cell_cfg = cfg;
    if (kind == ControllerKind::Deepc) {
      cell_cfg.control.lambda_g = lambda;
    } else {
      cell_cfg.control.lambda = lambda;
      cell_cfg.control.lambda_auto = false;
    }
    SweepCell cell;
    cell.lambda = lambda;
    std::vector<double> costs;
    for (std::uint64_t seed : cfg.run.seeds) {
      try {
        const RunRecord rec = run_closed_loop(cell_cfg, id, seed);
        if (rec.aborted) {
          ++cell.failed;
        } else {
          costs.push_back(rec.realized_cost);
        }
      } catch (const Error& e) {
        log::warn(std::string("sweep: cell failed: ") + e.what());
        ++cell.failed;
      }
    }
    cell.completed = static_cast<Eigen::Index>(costs.size());
    if (costs.empty()) {
      cell.mean_cost = std::numeric_limits<double>::quiet_NaN();
      cell.std_cost = std::numeric_limits<double>::quiet_NaN();
    } else {
      double sum = 0.0;
      for (double v : costs) sum += v;
      cell.mean_cost = sum / static_cast<double>(costs.size());
      double ss = 0.0;
      for (double v : costs) ss += (v - cell.mean_cost) * (v - cell.mean_cost);
      cell.std_cost = costs.size() > 1 ? std::sqrt(ss / static_cast<double>(costs.size() - 1)) : 0.0;
    }
    cells.push_back(cell);
  }
  return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells, std::ostream& out) {
  out << "lambda,mean_cost,std_cost,completed,failed\n";
  for (const SweepCell& c : cells) {
    out << format_double(c.lambda) << ',' << (std::isnan(c.mean_cost) ? "" : format_double(c.mean_cost))
        << ',' << (std::isnan(c.std_cost) ? "" : format_double(c.std_cost)) << ',' << c.completed
        << ',' << c.failed << '\n';
  }
}

}  // namespace gbc
