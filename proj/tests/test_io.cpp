#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mfgi/config.hpp"
#include "mfgi/experiments.hpp"

using namespace mfgi;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mfgi_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spit(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

}  // namespace

TEST_CASE("minimal config fills documented defaults") {
  const auto j = nlohmann::json::parse(R"({
    "model": {"d": 2, "levels": [0.0, 1.0], "T": 2.0}
  })");
  const ExperimentConfig cfg = parse_config(j);
  CHECK(cfg.model.Q == 1.0);
  CHECK(cfg.model.F == 5.0);
  CHECK(cfg.model.sigma == 1.0);
  CHECK(cfg.model.L == 1.0);
  CHECK(cfg.model.T == 2.0);
  CHECK(cfg.solver.K == 200);
  CHECK(cfg.solver.tol == 1e-9);
  CHECK(cfg.solver.max_iter == 500);
  CHECK(cfg.sim.replications == 2000);
  CHECK(cfg.model.initial_distribution() == SimplexVec{0.5, 0.5});
}

TEST_CASE("validation names offending keys and reports everything at once") {
  const auto j = nlohmann::json::parse(R"({
    "model": {"levels": [2.0, 1.0], "Q": -1.0},
    "solver": {"tol": 0.0},
    "grid": {"K": 1}
  })");
  try {
    parse_config(j);
    FAIL("expected validation failure");
  } catch (const ValidationError& e) {
    auto mentions = [&](const std::string& needle) {
      for (const auto& v : e.violations())
        if (v.find(needle) != std::string::npos) return true;
      return false;
    };
    CHECK(mentions("levels"));
    CHECK(mentions("Q"));
    CHECK(mentions("solver.tol"));
    CHECK(mentions("grid.K"));
    CHECK(e.violations().size() >= 4);
  }
}

TEST_CASE("unknown keys are rejected by name") {
  const auto j = nlohmann::json::parse(R"({
    "model": {"levels": [0.0, 1.0], "horizon": 1.0}
  })");
  try {
    parse_config(j);
    FAIL("expected validation failure");
  } catch (const ValidationError& e) {
    REQUIRE(e.violations().size() == 1);
    CHECK(e.violations().front().find("model.horizon") != std::string::npos);
  }
}

TEST_CASE("config round-trips through its serialization") {
  const auto j = nlohmann::json::parse(R"({
    "model": {"levels": [0.0, 0.5, 2.0], "T": 0.5, "sigma": 1.5,
              "detection": {"p_max": 0.7, "lambda": 2.0},
              "terminal": {"family": "linear", "a": 1.0, "b": -0.5}},
    "grid": {"K": 64},
    "sim": {"N_list": [10, 20], "replications": 100, "master_seed": 42},
    "epsnash": {"mollify_etas": [0.3], "constant_rates": [0.25]},
    "output": "results"
  })");
  const ExperimentConfig cfg = parse_config(j);
  const ExperimentConfig again = parse_config(to_json(cfg));
  CHECK(to_json(cfg) == to_json(again));
  CHECK(config_hash(cfg) == config_hash(again));
}

TEST_CASE("malformed config files fail as validation errors") {
  const fs::path dir = temp_dir("malformed");
  spit(dir / "broken.json", "{ not json");
  try {
    load_config((dir / "broken.json").string());
    FAIL("expected a parse failure");
  } catch (const ValidationError& e) {
    CHECK(e.violations().front().find("parse error") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config((dir / "missing.json").string()), ValidationError);
}

TEST_CASE("user deviation matrices are read and validated") {
  const auto good = nlohmann::json::parse(R"({
    "model": {"levels": [0.0, 1.0]},
    "epsnash": {"user_matrices": [[[0.0, 0.4], [0.1, 0.0]]]}
  })");
  const ExperimentConfig cfg = parse_config(good);
  REQUIRE(cfg.epsnash.user_matrices.size() == 1);
  CHECK(cfg.epsnash.user_matrices[0](0, 1) == 0.4);
  CHECK(cfg.epsnash.user_matrices[0](0, 0) == -0.4);  // diagonal filled in

  const auto hot = nlohmann::json::parse(R"({
    "model": {"levels": [0.0, 1.0]},
    "epsnash": {"user_matrices": [[[0.0, 3.0], [0.1, 0.0]]]}
  })");
  CHECK_THROWS_AS(parse_config(hot), ValidationError);  // rate above Q
}

TEST_CASE("config hash tracks content, not the output directory") {
  ExperimentConfig a;
  ExperimentConfig b;
  b.output = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.sim.master_seed += 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("solve runner: single-level model stays put") {
  ExperimentConfig cfg;
  cfg.model.levels = {1.0};
  cfg.model.x0 = {1.0};
  cfg.solver.K = 50;
  const fs::path out = temp_dir("solve_d1");
  RunOptions opt;
  opt.out_dir = out.string();
  CHECK(run_solve(cfg, opt) == kExitOk);

  const CsvTable table = read_csv((out / "mfg_solution.csv").string());
  REQUIRE(table.header.size() >= 4);  // t, X_1, V_1, alpha
  CHECK(table.header[0] == "t");
  CHECK(table.header[1] == "X_1");
  REQUIRE(table.rows.size() == 51);
  for (const auto& row : table.rows) CHECK(row[1] == 1.0);
}

TEST_CASE("solve runner output is byte-identical across runs and re-reads exactly") {
  ExperimentConfig cfg;
  cfg.model.x0 = {0.2, 0.5, 0.3};
  cfg.solver.K = 100;
  const fs::path out_a = temp_dir("solve_a");
  const fs::path out_b = temp_dir("solve_b");
  RunOptions opt_a, opt_b;
  opt_a.out_dir = out_a.string();
  opt_b.out_dir = out_b.string();
  REQUIRE(run_solve(cfg, opt_a) == kExitOk);
  REQUIRE(run_solve(cfg, opt_b) == kExitOk);
  CHECK(slurp(out_a / "mfg_solution.csv") == slurp(out_b / "mfg_solution.csv"));
  CHECK(slurp(out_a / "solve_summary.json") == slurp(out_b / "solve_summary.json"));

  // Full-precision round trip against the in-memory solution.
  const MfgSolution sol = solve_mfg_fixed_point(cfg.model, TimeGrid(cfg.solver.K, cfg.model.T));
  const CsvTable table = read_csv((out_a / "mfg_solution.csv").string());
  REQUIRE(table.rows.size() == static_cast<size_t>(cfg.solver.K) + 1);
  for (int k = 0; k <= cfg.solver.K; ++k) {
    const auto& row = table.rows[static_cast<size_t>(k)];
    CHECK(row[0] == sol.grid.node(k));
    for (int i = 0; i < 3; ++i) {
      CHECK(row[static_cast<size_t>(1 + i)] == sol.X[static_cast<size_t>(k)][static_cast<size_t>(i)]);
      CHECK(row[static_cast<size_t>(4 + i)] == sol.V[static_cast<size_t>(k)][static_cast<size_t>(i)]);
    }
    CHECK(row[7] == sol.alpha[static_cast<size_t>(k)]);
  }
}

TEST_CASE("manifest lists every emitted file with verifiable checksums") {
  ExperimentConfig cfg;
  cfg.model.x0 = {0.2, 0.5, 0.3};
  cfg.solver.K = 50;
  const fs::path out = temp_dir("manifest");
  RunOptions opt;
  opt.out_dir = out.string();
  REQUIRE(run_solve(cfg, opt) == kExitOk);

  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["tool_version"] == kToolVersion);
  CHECK(manifest["config_hash"] == config_hash_hex(cfg));

  std::size_t listed = 0;
  for (const auto& f : manifest["files"]) {
    const std::string name = f["name"];
    const std::string content = slurp(out / name);
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx",
                  static_cast<unsigned long long>(fnv1a64(content)));
    CHECK(f["fnv1a64"] == std::string(buf));
    ++listed;
  }
  // Nothing in the directory beyond the listed files and the manifest itself.
  std::size_t present = 0;
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().filename() == "manifest.json") continue;
    ++present;
  }
  CHECK(present == listed);
  CHECK(listed >= 2);
}

TEST_CASE("non-convergence exits with the documented code and leaves no partial output") {
  ExperimentConfig cfg;
  cfg.model.x0 = {0.2, 0.5, 0.3};
  cfg.solver.K = 50;
  cfg.solver.tol = 1e-14;
  cfg.solver.max_iter = 1;
  const fs::path out = temp_dir("nonconv");
  RunOptions opt;
  opt.out_dir = out.string();
  CHECK(run_solve(cfg, opt) == kExitNonConvergence);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(out)) {
    (void)entry;
    ++files;
  }
  CHECK(files == 0);
}

TEST_CASE("simulate runner emits trajectories with sidecar metadata when asked") {
  ExperimentConfig cfg;
  cfg.model.x0 = {0.2, 0.5, 0.3};
  cfg.solver.K = 50;
  cfg.sim.N_list = {20};
  cfg.sim.replications = 40;
  const fs::path out = temp_dir("simulate");
  RunOptions opt;
  opt.out_dir = out.string();
  opt.dump_trajectories = true;
  REQUIRE(run_simulate(cfg, opt) == kExitOk);

  const CsvTable traj = read_csv((out / "trajectory_N20_rep0.csv").string());
  REQUIRE(traj.header.size() == 4);
  CHECK(traj.header[0] == "time");
  CHECK(traj.header[3] == "tagged");
  double last = 0.0;
  for (const auto& row : traj.rows) {
    CHECK(row[0] > last);
    last = row[0];
    CHECK(row[1] >= 0.0);
    CHECK(row[2] >= 0.0);
    CHECK((row[3] == 0.0 || row[3] == 1.0));
  }
  const auto meta = nlohmann::json::parse(slurp(out / "trajectory_N20_rep0.meta.json"));
  CHECK(meta["N"] == 20);
  CHECK(meta["config_hash"] == config_hash_hex(cfg));
  CHECK(meta.contains("master_seed"));

  const auto summary = nlohmann::json::parse(slurp(out / "simulate_summary.json"));
  CHECK(summary["rows"].size() == 1);
  CHECK(summary["rows"][0]["N"] == 20);
}

TEST_CASE("rate-study runner emits the table and the fitted slope") {
  ExperimentConfig cfg;
  cfg.model.x0 = {0.2, 0.5, 0.3};
  cfg.solver.K = 50;
  cfg.sim.N_list = {10, 20, 40, 80};
  cfg.sim.replications = 100;
  cfg.epsnash.mollify_etas = {0.25};
  const fs::path out = temp_dir("rate_study");
  RunOptions opt;
  opt.out_dir = out.string();
  opt.threads = 4;
  REQUIRE(run_rate_study(cfg, opt) == kExitOk);

  const CsvTable table = read_csv((out / "rate_study.csv").string());
  CHECK(table.header == std::vector<std::string>{"N", "eps", "ci", "gap", "gap_ci"});
  REQUIRE(table.rows.size() == 4);
  for (size_t i = 0; i < 4; ++i)
    CHECK(table.rows[i][0] == static_cast<double>(cfg.sim.N_list[i]));

  const auto summary = nlohmann::json::parse(slurp(out / "rate_study_summary.json"));
  CHECK(summary["eta"] == 0.1);  // default rate-study width
  CHECK(summary["gap_fit"].contains("slope"));
  CHECK(summary["gap_fit"].contains("slope_half_width"));
  CHECK(summary["exclusions"].size() == 4);
}

TEST_CASE("command-line interface end to end") {
  const char* cli = std::getenv("MFGI_CLI");
  if (!cli) return;  // available when driven through the build harness

  const fs::path dir = temp_dir("cli");
  const fs::path config = dir / "config.json";
  spit(config, R"({
    "model": {"levels": [0.0, 1.0, 2.0], "x0": [0.2, 0.5, 0.3]},
    "grid": {"K": 50},
    "sim": {"N_list": [20], "replications": 40, "master_seed": 7}
  })");

  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(cli) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  SUBCASE("solve succeeds and honors --out") {
    CHECK(run("solve --config " + config.string() + " --out " + (dir / "out1").string()) == 0);
    CHECK(fs::exists(dir / "out1" / "mfg_solution.csv"));
    CHECK(fs::exists(dir / "out1" / "manifest.json"));
  }
  SUBCASE("mollify-compare writes its table") {
    CHECK(run("mollify-compare --config " + config.string() + " --out " +
              (dir / "out2").string()) == 0);
    const CsvTable t = read_csv((dir / "out2" / "mollify.csv").string());
    CHECK(t.header == std::vector<std::string>{"eta", "sup_gap", "payoff_gap"});
    CHECK(t.rows.size() == 4);  // default eta list
  }
  SUBCASE("validation failures exit with code 3") {
    spit(dir / "bad.json", R"({"model": {"levels": [2.0, 1.0]}})");
    CHECK(run("solve --config " + (dir / "bad.json").string() + " --out " +
              (dir / "out3").string()) == 3);
  }
  SUBCASE("missing config exits with code 3") {
    CHECK(run("solve --config " + (dir / "absent.json").string() + " --out " +
              (dir / "out4").string()) == 3);
  }
  SUBCASE("non-convergence exits with code 2") {
    spit(dir / "hard.json", R"({
      "model": {"levels": [0.0, 1.0, 2.0]},
      "solver": {"tol": 1e-14, "max_iter": 1}
    })");
    CHECK(run("solve --config " + (dir / "hard.json").string() + " --out " +
              (dir / "out5").string()) == 2);
  }
  SUBCASE("--seed overrides the configured master seed") {
    REQUIRE(run("solve --config " + config.string() + " --seed 99 --out " +
                (dir / "out6").string()) == 0);
    REQUIRE(run("solve --config " + config.string() + " --out " + (dir / "out7").string()) == 0);
    const auto a = nlohmann::json::parse(slurp(dir / "out6" / "manifest.json"));
    const auto b = nlohmann::json::parse(slurp(dir / "out7" / "manifest.json"));
    CHECK(a["config_hash"] != b["config_hash"]);
  }
}
