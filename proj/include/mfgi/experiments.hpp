#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgi/config.hpp"
#include "mfgi/epsnash.hpp"
#include "mfgi/model.hpp"
#include "mfgi/rng.hpp"
#include "mfgi/sim.hpp"
#include "mfgi/solver.hpp"
#include "mfgi/strategy.hpp"

namespace mfgi {

inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitNonConvergence = 2;
inline constexpr int kExitValidation = 3;

struct RunOptions {
  std::string out_dir;  // empty: use the config's output directory
  int threads = 1;
  bool dump_trajectories = false;
};

// Full round-trip precision; CSVs re-read to the exact in-memory doubles.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string iso8601_utc(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string fnv_hex(std::string_view data) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(fnv1a64(data)));
  return buf;
}

// Collects emitted files so a failed run can remove its partial outputs and a
// finished run can seal them into the manifest.
class OutputTree {
 public:
  explicit OutputTree(const std::filesystem::path& dir) : dir_(dir) {
    std::filesystem::create_directories(dir_);
    started_ = std::chrono::system_clock::now();
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    files_.emplace_back(name, fnv_hex(content));
  }

  void discard() {
    for (const auto& [name, sum] : files_) {
      std::error_code ec;
      std::filesystem::remove(dir_ / name, ec);
    }
    files_.clear();
  }

  void seal(const std::string& config_hash) {
    nlohmann::json manifest;
    manifest["config_hash"] = config_hash;
    manifest["tool_version"] = kToolVersion;
    manifest["started_at"] = iso8601_utc(started_);
    manifest["finished_at"] = iso8601_utc(std::chrono::system_clock::now());
    auto files = nlohmann::json::array();
    for (const auto& [name, sum] : files_) {
      nlohmann::json f;
      f["name"] = name;
      f["fnv1a64"] = sum;
      files.push_back(f);
    }
    manifest["files"] = files;
    const auto path = dir_ / "manifest.json";
    std::ofstream out(path, std::ios::binary);
    out << manifest.dump(2) << "\n";
  }

 private:
  std::filesystem::path dir_;
  std::chrono::system_clock::time_point started_;
  std::vector<std::pair<std::string, std::string>> files_;
};

inline std::string solution_csv(const MfgSolution& sol, const ModelParams& p,
                                const std::string& config_hash) {
  const int d = p.d();
  std::ostringstream out;
  out << "# config_hash=" << config_hash << "\n";
  out << "t";
  for (int i = 1; i <= d; ++i) out << ",X_" << i;
  for (int i = 1; i <= d; ++i) out << ",V_" << i;
  out << ",alpha";
  for (int i = 1; i <= d; ++i)
    for (int j = 1; j <= d; ++j)
      if (i != j) out << ",q_" << i << "_" << j;
  out << "\n";
  for (int k = 0; k <= sol.grid.K; ++k) {
    out << format_double(sol.grid.node(k));
    for (int i = 0; i < d; ++i) out << "," << format_double(sol.X[static_cast<size_t>(k)][static_cast<size_t>(i)]);
    for (int i = 0; i < d; ++i) out << "," << format_double(sol.V[static_cast<size_t>(k)][static_cast<size_t>(i)]);
    out << "," << format_double(sol.alpha[static_cast<size_t>(k)]);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j) out << "," << format_double(sol.qstar[static_cast<size_t>(k)](i, j));
    out << "\n";
  }
  return out.str();
}

inline std::string trajectory_csv(const PopulationTrajectory& traj, const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << "\n";
  out << "time,from,to,tagged\n";
  for (const auto& e : traj.events)
    out << format_double(e.time) << "," << e.from << "," << e.to << "," << (e.tagged ? 1 : 0)
        << "\n";
  return out.str();
}

inline nlohmann::json eps_report_json(const EpsNashReport& r) {
  nlohmann::json j;
  j["N"] = r.N;
  j["strategy"] = r.strategy_id;
  j["replications"] = r.replications;
  j["eps"] = r.eps;
  j["eps_half_width"] = r.eps_half_width;
  j["inspector_gap"] = r.inspector_gap;
  j["inspector_gap_half_width"] = r.inspector_gap_half_width;
  auto rows = nlohmann::json::array();
  for (const auto& d : r.deviations) {
    nlohmann::json row;
    row["deviation"] = d.name;
    row["deviating_mean"] = d.deviating_mean;
    row["deviating_half_width"] = d.deviating_half_width;
    row["conforming_mean"] = d.conforming_mean;
    row["conforming_half_width"] = d.conforming_half_width;
    row["gain_mean"] = d.gain_mean;
    row["gain_half_width"] = d.gain_half_width;
    rows.push_back(row);
  }
  j["deviations"] = rows;
  return j;
}

inline MfgSolution solve_from_config(const ExperimentConfig& cfg) {
  const TimeGrid grid(cfg.solver.K, cfg.model.T);
  FixedPointOptions opt;
  opt.tol = cfg.solver.tol;
  opt.max_iter = cfg.solver.max_iter;
  opt.damping = cfg.solver.damping;
  return solve_mfg_fixed_point(cfg.model, grid, cfg.model.initial_distribution(), opt);
}

inline uint64_t seed_for_population(const ExperimentConfig& cfg, int64_t N) {
  return cfg.sim.common_random_numbers ? cfg.sim.master_seed
                                       : derive_seed(cfg.sim.master_seed, static_cast<uint64_t>(N));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment runners. Each writes its files plus manifest.json into the
// output directory, removes partial outputs on failure, and returns a process
// exit code.

inline int run_solve(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const std::string hash = config_hash_hex(cfg);
  detail::OutputTree tree(opt.out_dir.empty() ? cfg.output : opt.out_dir);
  try {
    const MfgSolution sol = detail::solve_from_config(cfg);
    if (!sol.converged) {
      tree.discard();
      return kExitNonConvergence;
    }
    tree.write("mfg_solution.csv", detail::solution_csv(sol, cfg.model, hash));
    nlohmann::json summary;
    summary["config_hash"] = hash;
    summary["converged"] = sol.converged;
    summary["iterations"] = sol.iterations;
    summary["residual"] = sol.residual;
    summary["contraction_estimate"] = sol.contraction_estimate;
    summary["residual_history"] = sol.residual_history;
    tree.write("solve_summary.json", summary.dump(2) + "\n");
    tree.seal(hash);
    return kExitOk;
  } catch (...) {
    tree.discard();
    throw;
  }
}

inline int run_simulate(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const std::string hash = config_hash_hex(cfg);
  detail::OutputTree tree(opt.out_dir.empty() ? cfg.output : opt.out_dir);
  try {
    const MfgSolution sol = detail::solve_from_config(cfg);
    if (!sol.converged) {
      tree.discard();
      return kExitNonConvergence;
    }
    const ModelParams& p = cfg.model;
    const GridStrategy qstar_policy(sol.grid, sol.qstar);
    const Observable f = bundled_smooth_observable(p);
    const int m0 = p.d() / 2;

    auto rows = nlohmann::json::array();
    for (int64_t N : cfg.sim.N_list) {
      const uint64_t seed = detail::seed_for_population(cfg, N);
      const TaggedState init = matched_initial_state(sol.X.front(), N, m0);
      const PayoffEstimate pe =
          estimate_payoff(init, qstar_policy, qstar_policy, PayoffRole::tagged(), p, sol.grid.T,
                          seed, cfg.sim.replications, opt.threads);
      const GapEstimate gap = propagator_gap(sol, qstar_policy, f, m0, N, p, seed,
                                             cfg.sim.replications, opt.threads);
      nlohmann::json row;
      row["N"] = N;
      row["payoff_mean"] = pe.mean;
      row["payoff_half_width"] = pe.half_width;
      row["limit_payoff"] = sol.V.front()[static_cast<size_t>(m0)];
      row["propagator_gap"] = gap.gap;
      row["propagator_gap_half_width"] = gap.half_width;
      row["replications"] = pe.replications;
      rows.push_back(row);

      if (opt.dump_trajectories) {
        const PopulationTrajectory traj =
            simulate_tagged(init, qstar_policy, qstar_policy, p, sol.grid.T, seed, 0);
        const std::string stem = "trajectory_N" + std::to_string(N) + "_rep0";
        tree.write(stem + ".csv", detail::trajectory_csv(traj, hash));
        nlohmann::json meta;
        meta["N"] = N;
        meta["master_seed"] = seed;
        meta["replication"] = 0;
        meta["config_hash"] = hash;
        tree.write(stem + ".meta.json", meta.dump(2) + "\n");
      }
    }
    nlohmann::json summary;
    summary["config_hash"] = hash;
    summary["tagged_initial_level"] = m0;
    summary["rows"] = rows;
    tree.write("simulate_summary.json", summary.dump(2) + "\n");
    tree.seal(hash);
    return kExitOk;
  } catch (...) {
    tree.discard();
    throw;
  }
}

inline int run_epsnash(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const std::string hash = config_hash_hex(cfg);
  detail::OutputTree tree(opt.out_dir.empty() ? cfg.output : opt.out_dir);
  try {
    const MfgSolution sol = detail::solve_from_config(cfg);
    if (!sol.converged) {
      tree.discard();
      return kExitNonConvergence;
    }
    const ModelParams& p = cfg.model;
    const GridStrategy qstar_policy(sol.grid, sol.qstar);
    const auto family = bundled_deviation_family(
        sol, p, cfg.epsnash.mollify_etas, cfg.epsnash.constant_rates, cfg.epsnash.user_matrices,
        cfg.epsnash.include_stay, cfg.epsnash.include_max_up, cfg.epsnash.include_max_down);

    auto reports = nlohmann::json::array();
    for (int64_t N : cfg.sim.N_list) {
      const uint64_t seed = detail::seed_for_population(cfg, N);
      const EpsNashReport r = estimate_eps(sol, qstar_policy, "qstar", family, N, p, seed,
                                           cfg.sim.replications, opt.threads);
      reports.push_back(detail::eps_report_json(r));
    }
    nlohmann::json out;
    out["config_hash"] = hash;
    out["strategy"] = "qstar";
    out["reports"] = reports;
    tree.write("epsnash_report.json", out.dump(2) + "\n");
    tree.seal(hash);
    return kExitOk;
  } catch (...) {
    tree.discard();
    throw;
  }
}

inline int run_rate_study(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const std::string hash = config_hash_hex(cfg);
  detail::OutputTree tree(opt.out_dir.empty() ? cfg.output : opt.out_dir);
  try {
    const MfgSolution sol = detail::solve_from_config(cfg);
    if (!sol.converged) {
      tree.discard();
      return kExitNonConvergence;
    }
    const ModelParams& p = cfg.model;
    const auto family = bundled_deviation_family(
        sol, p, cfg.epsnash.mollify_etas, cfg.epsnash.constant_rates, cfg.epsnash.user_matrices,
        cfg.epsnash.include_stay, cfg.epsnash.include_max_up, cfg.epsnash.include_max_down);
    const uint64_t seed = cfg.sim.master_seed;
    const RateStudyReport report =
        rate_study(sol, cfg.epsnash.rate_study_eta, cfg.sim.N_list, family, p, seed,
                   cfg.sim.replications, opt.threads, cfg.sim.common_random_numbers);

    std::ostringstream csv;
    csv << "# config_hash=" << hash << "\n";
    csv << "N,eps,ci,gap,gap_ci\n";
    for (const auto& row : report.rows)
      csv << row.N << "," << format_double(row.eps) << "," << format_double(row.eps_half_width)
          << "," << format_double(row.gap) << "," << format_double(row.gap_half_width) << "\n";
    tree.write("rate_study.csv", csv.str());

    auto fit_json = [](const RateStudyFit& f) {
      nlohmann::json j;
      j["refused"] = f.refused;
      j["slope"] = f.slope;
      j["slope_half_width"] = f.slope_half_width;
      j["intercept"] = f.intercept;
      j["points"] = f.points;
      return j;
    };
    nlohmann::json summary;
    summary["config_hash"] = hash;
    summary["eta"] = report.eta;
    summary["gap_deviation"] = report.gap_deviation;
    summary["gap_fit"] = fit_json(report.gap_fit);
    summary["eps_fit"] = fit_json(report.eps_fit);
    auto flags = nlohmann::json::array();
    for (const auto& row : report.rows) {
      nlohmann::json fl;
      fl["N"] = row.N;
      fl["eps_excluded"] = row.eps_excluded;
      fl["gap_excluded"] = row.gap_excluded;
      flags.push_back(fl);
    }
    summary["exclusions"] = flags;
    tree.write("rate_study_summary.json", summary.dump(2) + "\n");
    tree.seal(hash);
    return kExitOk;
  } catch (...) {
    tree.discard();
    throw;
  }
}

inline int run_mollify_compare(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const std::string hash = config_hash_hex(cfg);
  detail::OutputTree tree(opt.out_dir.empty() ? cfg.output : opt.out_dir);
  try {
    const MfgSolution sol = detail::solve_from_config(cfg);
    if (!sol.converged) {
      tree.discard();
      return kExitNonConvergence;
    }
    const auto rows = mollify_compare(sol, cfg.epsnash.mollify_etas, cfg.model);
    std::ostringstream csv;
    csv << "# config_hash=" << hash << "\n";
    csv << "eta,sup_gap,payoff_gap\n";
    for (const auto& row : rows)
      csv << format_double(row.eta) << "," << format_double(row.sup_gap) << ","
          << format_double(row.payoff_gap) << "\n";
    tree.write("mollify.csv", csv.str());
    tree.seal(hash);
    return kExitOk;
  } catch (...) {
    tree.discard();
    throw;
  }
}

// ---------------------------------------------------------------------------
// Small CSV reader used by tests and downstream tooling; skips '#' comments.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  CsvTable table;
  std::string line;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!header_done) {
      table.header = cells;
      header_done = true;
      continue;
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(std::strtod(c.c_str(), nullptr));
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace mfgi
