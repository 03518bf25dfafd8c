#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gbc/errors.hpp"
#include "gbc/harness.hpp"

using namespace gbc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base_config() {
  return json{{"schema", 1},
              {"plant", {{"benchmark", {{"process_std", 0.01}, {"measurement_std", 0.02}}}}},
              {"data", {{"T", 300}, {"seed", 3}}},
              {"horizons", {{"L_ini", 3}, {"L_f", 5}}},
              {"control", {{"controller", "spc"}, {"Q", 1.0}, {"R", 0.1}, {"y_ref", 1.0}}},
              {"run", {{"steps", 20}, {"seeds", {1, 2}}}}};
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / ("gbc_test_harness_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

fs::path write_json(const fs::path& path, const json& doc) {
  std::ofstream(path) << doc.dump(2);
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + GBC_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig cfg = parse_config(base_config());
  CHECK(cfg.l_ini == 3);
  CHECK(cfg.l_f == 5);
  CHECK(cfg.control.controller == ControllerKind::Spc);
  CHECK(cfg.control.y_ref(0) == 1.0);
  CHECK(cfg.run.seeds.size() == 2);
  CHECK(cfg.plant.n() == 3);

  json bad = base_config();
  bad["control"]["nonsense"] = 1;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  bad = base_config();
  bad["schema"] = 2;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  bad = base_config();
  bad["control"]["y_ref"] = json::array({1.0, 2.0});
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  bad = base_config();
  bad["control"]["controller"] = "pid";
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  json boxed = base_config();
  boxed["control"]["u_box"] = json::array({-0.5, nullptr});
  const ExperimentConfig b = parse_config(boxed);
  CHECK(b.control.u_lower(0) == -0.5);
  CHECK(b.control.u_upper(0) >= kInfinity);
}

TEST_CASE("model and behavior JSON round trip") {
  std::mt19937_64 gen(1);
  const StochasticLtiModel m = random_stable_model(3, 2, 1, 0.9, 0.1, 0.2, gen);
  const StochasticLtiModel back = model_from_json(json::parse(model_to_json(m).dump()));
  CHECK(back.a == m.a);
  CHECK(back.sigma_eta == m.sigma_eta);

  GaussianBehavior gb;
  gb.dims = {1, 1};
  gb.window_len = 2;
  gb.mean = Vector::LinSpaced(4, 0.1, 0.4);
  gb.cov = Matrix::Identity(4, 4) * (1.0 / 3.0);
  const GaussianBehavior gb2 = behavior_from_json(json::parse(behavior_to_json(gb).dump()));
  CHECK(gb2.mean == gb.mean);
  CHECK(gb2.cov == gb.cov);
}

TEST_CASE("zero noise and zero reference give an all-zero run") {
  json doc = base_config();
  doc["plant"]["benchmark"] = {{"process_std", 0.0}, {"measurement_std", 0.0}};
  doc["control"]["y_ref"] = 0.0;
  doc["run"]["warmup_input_std"] = 0.0;
  const ExperimentConfig cfg = parse_config(doc);
  const RunRecord rec = run_closed_loop(cfg, 1);
  CHECK_FALSE(rec.aborted);
  CHECK(rec.steps.size() == 20);
  CHECK(rec.realized_cost == 0.0);
  for (const StepRecord& s : rec.steps) {
    CHECK(s.u.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.y.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("realized cost is the sum of stage costs and runs are reproducible") {
  for (const char* controller : {"spc", "ce", "deepc", "optimistic", "robust"}) {
    json doc = base_config();
    doc["control"]["controller"] = controller;
    if (std::string(controller) == "robust") doc["control"]["lambda"] = "auto";
    const ExperimentConfig cfg = parse_config(doc);
    const Identification id = identify(cfg);
    const RunRecord a = run_closed_loop(cfg, id, 5);
    const RunRecord b = run_closed_loop(cfg, id, 5);
    CHECK_FALSE(a.aborted);
    double sum = 0.0;
    for (const StepRecord& s : a.steps) sum += s.stage_cost;
    CHECK(std::abs(sum - a.realized_cost) <= 1e-9 * (1.0 + std::abs(sum)));
    std::ostringstream ca, cb;
    write_run_csv(a, ca);
    write_run_csv(b, cb);
    CHECK(ca.str() == cb.str());
  }
}

TEST_CASE("noiseless tracking reaches a step reference") {
  json doc = base_config();
  doc["plant"]["benchmark"] = {{"process_std", 0.0}, {"measurement_std", 0.0}};
  const ExperimentConfig probe = parse_config(doc);
  const StochasticLtiModel& m = probe.plant;
  const Eigen::Index n = m.n();
  const double dc_gain =
      (m.c * (Matrix::Identity(n, n) - m.a).inverse() * m.b + m.d)(0, 0);
  const double target = 1.5;
  doc["control"]["y_ref"] = target;
  doc["control"]["u_ref"] = target / dc_gain;
  doc["run"]["steps"] = 150;
  const ExperimentConfig cfg = parse_config(doc);
  const RunRecord rec = run_closed_loop(cfg, 1);
  REQUIRE_FALSE(rec.aborted);
  CHECK(std::abs(rec.steps.back().y(0) - target) < 1e-5);
  CHECK(std::abs(rec.steps.back().u(0) - target / dc_gain) < 1e-5);
}

TEST_CASE("lambda sweep") {
  json doc = base_config();
  doc["control"]["controller"] = "optimistic";
  doc["run"]["steps"] = 10;
  const ExperimentConfig cfg = parse_config(doc);
  const std::vector<double> grid{0.1, 1.0, 1e10};
  const std::vector<SweepCell> cells = sweep_lambda(cfg, grid);
  REQUIRE(cells.size() == 3);
  for (const SweepCell& c : cells) CHECK(c.completed == 2);
  std::ostringstream csv;
  write_sweep_csv(cells, csv);
  std::istringstream lines(csv.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  CHECK(count == 4);

  // The largest multiplier reproduces the certainty-equivalence loop.
  ExperimentConfig ce = cfg;
  ce.control.controller = ControllerKind::Ce;
  const Identification id = identify(ce);
  double mean = 0.0;
  for (std::uint64_t s : ce.run.seeds) mean += run_closed_loop(ce, id, s).realized_cost;
  mean /= static_cast<double>(ce.run.seeds.size());
  CHECK(cells.back().mean_cost == doctest::Approx(mean).epsilon(1e-4));

  const std::vector<SweepCell> single = sweep_lambda(cfg, {1.0});
  CHECK(single.front().mean_cost == cells[1].mean_cost);
  CHECK_THROWS_AS(sweep_lambda(cfg, {1.0, 0.1}), ConfigError);
}

TEST_CASE("cli exit codes and byte-identical output") {
  const fs::path dir = scratch_dir();
  const fs::path cfg = write_json(dir / "cfg.json", base_config());
  const fs::path a = dir / "a.csv", b = dir / "b.csv";
  CHECK(run_cli("closed-loop --config " + cfg.string() + " --out " + a.string()) == 0);
  CHECK(run_cli("closed-loop --config " + cfg.string() + " --out " + b.string()) == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(fs::exists(dir / "a.summary.json"));

  json bad = base_config();
  bad["horizons"]["L_f"] = 0;
  const fs::path bad_cfg = write_json(dir / "bad.json", bad);
  CHECK(run_cli("closed-loop --config " + bad_cfg.string() + " --out " + a.string()) == 3);
  CHECK(run_cli("closed-loop --config " + (dir / "missing.json").string() + " --out " + a.string()) == 3);
  CHECK(run_cli("control --config " + cfg.string() + " --controller robust --lambda 1e-9") == 3);

  json infeasible = base_config();
  infeasible["control"]["u_box"] = json::array({0.0, 0.0});
  infeasible["control"]["y_box"] = json::array({5.0, 6.0});
  const fs::path inf_cfg = write_json(dir / "inf.json", infeasible);
  CHECK(run_cli("control --config " + inf_cfg.string()) == 2);

  CHECK(run_cli("control --config " + cfg.string() + " --controller deepc") == 0);
  CHECK(run_cli("sweep --config " + cfg.string() + " --grid 0.1,1") == 3);
  json opt = base_config();
  opt["control"]["controller"] = "optimistic";
  opt["run"]["steps"] = 5;
  const fs::path opt_cfg = write_json(dir / "opt.json", opt);
  CHECK(run_cli("sweep --config " + opt_cfg.string() + " --grid 0.1,1 --out " + (dir / "s.csv").string()) == 0);

  CHECK(run_cli("verify --suite solver") == 0);
  CHECK(run_cli("verify --suite theorems --inject-bug") == 4);
  CHECK(run_cli("verify --suite nonsense") == 3);
  fs::remove_all(dir);
}

TEST_CASE("cli identify and predict") {
  const fs::path dir = scratch_dir();
  const ExperimentConfig cfg = parse_config(base_config());
  const Identification id = identify(cfg);
  save_csv(id.trajectory, dir / "data.csv");
  const fs::path cfg_path = write_json(dir / "cfg.json", base_config());
  const fs::path beh = dir / "beh.json";
  REQUIRE(run_cli("identify --data " + (dir / "data.csv").string() + " --config " + cfg_path.string() +
                  " --out " + beh.string()) == 0);
  const GaussianBehavior gb = behavior_from_json(json::parse(slurp(beh)));
  CHECK(gb.window_len == cfg.l_ini + cfg.l_f);

  std::ofstream(dir / "wini.csv") << "u1,y1\n0.1,0.2\n0.0,0.1\n-0.1,0.0\n";
  std::ofstream(dir / "uf.csv") << "u1\n1\n1\n1\n1\n1\n";
  CHECK(run_cli("predict --behavior " + beh.string() + " --wini " + (dir / "wini.csv").string() +
                " --uf " + (dir / "uf.csv").string()) == 0);
  std::ofstream(dir / "short.csv") << "u1\n1\n";
  CHECK(run_cli("predict --behavior " + beh.string() + " --wini " + (dir / "wini.csv").string() +
                " --uf " + (dir / "short.csv").string()) == 3);
  fs::remove_all(dir);
}
