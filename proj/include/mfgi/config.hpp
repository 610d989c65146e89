#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgi/errors.hpp"
#include "mfgi/model.hpp"

namespace mfgi {

struct SolverConfig {
  int K = 200;
  double tol = 1e-9;
  int max_iter = 500;
  double damping = 0.0;
};

struct SimConfig {
  std::vector<int64_t> N_list{50, 100, 200, 400, 800};
  int64_t replications = 2000;
  uint64_t master_seed = 12345;
  bool common_random_numbers = false;  // share streams across N values
};

struct EpsnashConfig {
  bool include_stay = true;
  bool include_max_up = true;
  bool include_max_down = true;
  std::vector<double> constant_rates{0.5};
  std::vector<double> mollify_etas{0.5, 0.25, 0.1, 0.01};
  double rate_study_eta = 0.1;
  std::vector<RateMatrix> user_matrices;
};

struct ExperimentConfig {
  ModelParams model;
  SolverConfig solver;
  SimConfig sim;
  EpsnashConfig epsnash;
  std::string output = "out";
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& block,
                         const std::vector<std::string>& known, std::vector<std::string>& errors) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known)
      if (it.key() == k) ok = true;
    if (!ok) errors.push_back(block + it.key() + ": unknown key");
  }
}

template <class T>
void read_number(const nlohmann::json& j, const std::string& block, const char* key, T& out,
                 std::vector<std::string>& errors) {
  if (!j.contains(key)) return;
  if (!j[key].is_number()) {
    errors.push_back(block + key + ": expected a number");
    return;
  }
  out = j[key].get<T>();
}

inline void read_bool(const nlohmann::json& j, const std::string& block, const char* key,
                      bool& out, std::vector<std::string>& errors) {
  if (!j.contains(key)) return;
  if (!j[key].is_boolean()) {
    errors.push_back(block + key + ": expected a boolean");
    return;
  }
  out = j[key].get<bool>();
}

template <class T>
void read_array(const nlohmann::json& j, const std::string& block, const char* key,
                std::vector<T>& out, std::vector<std::string>& errors) {
  if (!j.contains(key)) return;
  if (!j[key].is_array()) {
    errors.push_back(block + key + ": expected an array");
    return;
  }
  std::vector<T> parsed;
  for (const auto& e : j[key]) {
    if (!e.is_number()) {
      errors.push_back(block + key + ": expected numeric entries");
      return;
    }
    parsed.push_back(e.get<T>());
  }
  out = std::move(parsed);
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;

  detail::require_keys(j, "", {"model", "grid", "solver", "sim", "epsnash", "output"}, errors);

  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::require_keys(m, "model.",
                         {"d", "levels", "Q", "F", "sigma", "L", "T", "x0", "detection", "terminal"},
                         errors);
    detail::read_array(m, "model.", "levels", cfg.model.levels, errors);
    detail::read_number(m, "model.", "Q", cfg.model.Q, errors);
    detail::read_number(m, "model.", "F", cfg.model.F, errors);
    detail::read_number(m, "model.", "sigma", cfg.model.sigma, errors);
    detail::read_number(m, "model.", "L", cfg.model.L, errors);
    detail::read_number(m, "model.", "T", cfg.model.T, errors);
    detail::read_array(m, "model.", "x0", cfg.model.x0, errors);
    if (m.contains("d")) {
      int d = 0;
      detail::read_number(m, "model.", "d", d, errors);
      if (d > 0 && d != static_cast<int>(cfg.model.levels.size()))
        errors.push_back("model.d: does not match the length of model.levels");
    }
    if (m.contains("detection")) {
      const auto& det = m["detection"];
      detail::require_keys(det, "model.detection.", {"family", "p_max", "lambda"}, errors);
      if (det.contains("family") && det["family"] != "exponential")
        errors.push_back("model.detection.family: only \"exponential\" is supported");
      detail::read_number(det, "model.detection.", "p_max", cfg.model.detection.p_max, errors);
      detail::read_number(det, "model.detection.", "lambda", cfg.model.detection.lambda, errors);
    }
    if (m.contains("terminal")) {
      const auto& term = m["terminal"];
      detail::require_keys(term, "model.terminal.", {"family", "a", "b"}, errors);
      if (term.contains("family")) {
        if (term["family"] == "zero")
          cfg.model.terminal.family = TerminalFamily::Zero;
        else if (term["family"] == "linear")
          cfg.model.terminal.family = TerminalFamily::Linear;
        else
          errors.push_back("model.terminal.family: expected \"zero\" or \"linear\"");
      }
      detail::read_number(term, "model.terminal.", "a", cfg.model.terminal.a, errors);
      detail::read_number(term, "model.terminal.", "b", cfg.model.terminal.b, errors);
    }
  }

  if (j.contains("grid")) {
    detail::require_keys(j["grid"], "grid.", {"K"}, errors);
    detail::read_number(j["grid"], "grid.", "K", cfg.solver.K, errors);
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    detail::require_keys(s, "solver.", {"tol", "max_iter", "damping"}, errors);
    detail::read_number(s, "solver.", "tol", cfg.solver.tol, errors);
    detail::read_number(s, "solver.", "max_iter", cfg.solver.max_iter, errors);
    detail::read_number(s, "solver.", "damping", cfg.solver.damping, errors);
  }
  if (j.contains("sim")) {
    const auto& s = j["sim"];
    detail::require_keys(s, "sim.",
                         {"N_list", "replications", "master_seed", "common_random_numbers"},
                         errors);
    detail::read_array(s, "sim.", "N_list", cfg.sim.N_list, errors);
    detail::read_number(s, "sim.", "replications", cfg.sim.replications, errors);
    detail::read_number(s, "sim.", "master_seed", cfg.sim.master_seed, errors);
    detail::read_bool(s, "sim.", "common_random_numbers", cfg.sim.common_random_numbers, errors);
  }
  if (j.contains("epsnash")) {
    const auto& e = j["epsnash"];
    detail::require_keys(e, "epsnash.",
                         {"include_stay", "include_max_up", "include_max_down", "constant_rates",
                          "mollify_etas", "rate_study_eta", "user_matrices"},
                         errors);
    detail::read_bool(e, "epsnash.", "include_stay", cfg.epsnash.include_stay, errors);
    detail::read_bool(e, "epsnash.", "include_max_up", cfg.epsnash.include_max_up, errors);
    detail::read_bool(e, "epsnash.", "include_max_down", cfg.epsnash.include_max_down, errors);
    detail::read_array(e, "epsnash.", "constant_rates", cfg.epsnash.constant_rates, errors);
    detail::read_array(e, "epsnash.", "mollify_etas", cfg.epsnash.mollify_etas, errors);
    detail::read_number(e, "epsnash.", "rate_study_eta", cfg.epsnash.rate_study_eta, errors);
    if (e.contains("user_matrices")) {
      if (!e["user_matrices"].is_array()) {
        errors.push_back("epsnash.user_matrices: expected an array of matrices");
      } else {
        const int d = cfg.model.d();
        for (const auto& jm : e["user_matrices"]) {
          if (!jm.is_array() || static_cast<int>(jm.size()) != d) {
            errors.push_back("epsnash.user_matrices: each matrix must be d rows of d numbers");
            continue;
          }
          RateMatrix m(d);
          bool shape_ok = true;
          for (int r = 0; r < d; ++r) {
            if (!jm[static_cast<size_t>(r)].is_array() ||
                static_cast<int>(jm[static_cast<size_t>(r)].size()) != d) {
              shape_ok = false;
              break;
            }
            for (int c = 0; c < d; ++c)
              m(r, c) = jm[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
          }
          if (!shape_ok) {
            errors.push_back("epsnash.user_matrices: each matrix must be d rows of d numbers");
            continue;
          }
          m.finalize_diagonal();
          for (auto& msg : m.validation_errors(cfg.model.Q))
            errors.push_back("epsnash.user_matrices: " + msg);
          cfg.epsnash.user_matrices.push_back(std::move(m));
        }
      }
    }
  }
  if (j.contains("output")) {
    if (!j["output"].is_string())
      errors.push_back("output: expected a string");
    else
      cfg.output = j["output"].get<std::string>();
  }

  // Semantic validation, all violations reported together.
  for (auto& msg : cfg.model.validation_errors()) errors.push_back("model." + msg);
  if (cfg.solver.K < 2) errors.push_back("grid.K: must be >= 2");
  if (!(cfg.solver.tol > 0.0)) errors.push_back("solver.tol: must be > 0");
  if (cfg.solver.max_iter < 1) errors.push_back("solver.max_iter: must be >= 1");
  if (!(cfg.solver.damping >= 0.0 && cfg.solver.damping < 1.0))
    errors.push_back("solver.damping: must be in [0, 1)");
  if (cfg.sim.N_list.empty()) errors.push_back("sim.N_list: must not be empty");
  for (int64_t n : cfg.sim.N_list)
    if (n < 1) {
      errors.push_back("sim.N_list: entries must be >= 1");
      break;
    }
  if (cfg.sim.replications < 2) errors.push_back("sim.replications: must be >= 2");
  for (double c : cfg.epsnash.constant_rates)
    if (c < 0.0 || c > cfg.model.Q) {
      errors.push_back("epsnash.constant_rates: entries must be in [0, Q]");
      break;
    }
  for (double eta : cfg.epsnash.mollify_etas)
    if (!(eta > 0.0)) {
      errors.push_back("epsnash.mollify_etas: entries must be > 0");
      break;
    }
  if (!(cfg.epsnash.rate_study_eta > 0.0)) errors.push_back("epsnash.rate_study_eta: must be > 0");
  if (cfg.output.empty()) errors.push_back("output: must not be empty");

  if (!errors.empty()) throw ValidationError(std::move(errors));
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError({"config file not found: " + path});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError({std::string("config parse error: ") + e.what()});
  }
  return parse_config(j);
}

// Canonical serialization: every field explicit, keys sorted by the JSON
// library, numbers in shortest round-trip form. The config hash is FNV-1a 64
// over this dump.
inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["model"]["levels"] = cfg.model.levels;
  j["model"]["Q"] = cfg.model.Q;
  j["model"]["F"] = cfg.model.F;
  j["model"]["sigma"] = cfg.model.sigma;
  j["model"]["L"] = cfg.model.L;
  j["model"]["T"] = cfg.model.T;
  j["model"]["x0"] = cfg.model.initial_distribution();
  j["model"]["detection"]["family"] = "exponential";
  j["model"]["detection"]["p_max"] = cfg.model.detection.p_max;
  j["model"]["detection"]["lambda"] = cfg.model.detection.lambda;
  j["model"]["terminal"]["family"] =
      cfg.model.terminal.family == TerminalFamily::Zero ? "zero" : "linear";
  j["model"]["terminal"]["a"] = cfg.model.terminal.a;
  j["model"]["terminal"]["b"] = cfg.model.terminal.b;
  j["grid"]["K"] = cfg.solver.K;
  j["solver"]["tol"] = cfg.solver.tol;
  j["solver"]["max_iter"] = cfg.solver.max_iter;
  j["solver"]["damping"] = cfg.solver.damping;
  j["sim"]["N_list"] = cfg.sim.N_list;
  j["sim"]["replications"] = cfg.sim.replications;
  j["sim"]["master_seed"] = cfg.sim.master_seed;
  j["sim"]["common_random_numbers"] = cfg.sim.common_random_numbers;
  j["epsnash"]["include_stay"] = cfg.epsnash.include_stay;
  j["epsnash"]["include_max_up"] = cfg.epsnash.include_max_up;
  j["epsnash"]["include_max_down"] = cfg.epsnash.include_max_down;
  j["epsnash"]["constant_rates"] = cfg.epsnash.constant_rates;
  j["epsnash"]["mollify_etas"] = cfg.epsnash.mollify_etas;
  j["epsnash"]["rate_study_eta"] = cfg.epsnash.rate_study_eta;
  auto mats = nlohmann::json::array();
  for (const auto& m : cfg.epsnash.user_matrices) {
    auto jm = nlohmann::json::array();
    for (int r = 0; r < m.dim(); ++r) {
      auto row = nlohmann::json::array();
      for (int c = 0; c < m.dim(); ++c) row.push_back(m(r, c));
      jm.push_back(row);
    }
    mats.push_back(jm);
  }
  j["epsnash"]["user_matrices"] = mats;
  j["output"] = cfg.output;
  return j;
}

inline uint64_t fnv1a64(std::string_view data) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Hash of the experiment-defining content: the output directory is excluded
// so relocating a run does not change its identity.
inline uint64_t config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("output");
  return fnv1a64(j.dump());
}

inline std::string config_hash_hex(const ExperimentConfig& cfg) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

}  // namespace mfgi
