#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mfgi/model.hpp"
#include "mfgi/montecarlo.hpp"
#include "mfgi/rng.hpp"
#include "mfgi/sim.hpp"
#include "mfgi/solver.hpp"
#include "mfgi/strategy.hpp"

namespace mfgi {

struct Deviation {
  std::string name;
  std::shared_ptr<const StrategySource> source;
};

// The bundled deviation family: the bang-bang extremes, uniform constant
// matrices, smoothed variants of q*, and any user-supplied constant matrices.
// A finite family makes the reported eps a lower-bound estimator of the true
// best-response gap.
inline std::vector<Deviation> bundled_deviation_family(
    const MfgSolution& sol, const ModelParams& p, const std::vector<double>& mollify_etas,
    const std::vector<double>& constant_rates, const std::vector<RateMatrix>& user_matrices,
    bool include_stay = true, bool include_max_up = true, bool include_max_down = true) {
  std::vector<Deviation> family;
  if (include_stay)
    family.push_back({"stay", std::make_shared<ConstantStrategy>(make_stay(p.d()))});
  if (include_max_up)
    family.push_back({"max_up", std::make_shared<ConstantStrategy>(make_max_up(p))});
  if (include_max_down)
    family.push_back({"max_down", std::make_shared<ConstantStrategy>(make_max_down(p))});
  for (double c : constant_rates)
    family.push_back({"constant(" + std::to_string(c) + ")",
                      std::make_shared<ConstantStrategy>(make_uniform_constant(p, c))});
  for (double eta : mollify_etas)
    family.push_back({"mollified(" + std::to_string(eta) + ")",
                      std::make_shared<GridStrategy>(make_mollified_policy(sol.V, sol.grid, p, eta))});
  for (size_t k = 0; k < user_matrices.size(); ++k) {
    auto errs = user_matrices[k].validation_errors(p.Q);
    if (!errs.empty()) throw ValidationError(std::move(errs));
    family.push_back({"user(" + std::to_string(k) + ")",
                      std::make_shared<ConstantStrategy>(ConstantStrategy(user_matrices[k]))});
  }
  return family;
}

struct DeviationOutcome {
  std::string name;
  double deviating_mean = 0.0;
  double deviating_half_width = 0.0;
  double conforming_mean = 0.0;
  double conforming_half_width = 0.0;
  double gain_mean = 0.0;        // paired difference: deviating - conforming
  double gain_half_width = 0.0;  // CI of the paired difference
};

struct EpsNashReport {
  int64_t N = 0;
  std::string strategy_id;
  int64_t replications = 0;
  std::vector<DeviationOutcome> deviations;
  double eps = 0.0;             // max over deviations of the positive part of the gain
  double eps_half_width = 0.0;  // CI of the gain that attains the max
  double inspector_gap = 0.0;   // path-average |U(a*(X), X) - U(a*(X^N), X^N)|
  double inspector_gap_half_width = 0.0;
};

namespace detail {

// Path-average inspector payoff gap between the limit best response along the
// limit path and the plug-in best response along the realized path. Piecewise
// trapezoid with subdivisions at the solution grid nodes.
inline double inspector_path_gap(const PopulationTrajectory& traj, const MfgSolution& sol,
                                 const ModelParams& p) {
  std::vector<int64_t> counts = traj.initial.counts;
  SimplexVec xn = traj.initial.empirical();
  const int64_t N = traj.initial.total();
  const TimeGrid& grid = sol.grid;

  double integral = 0.0;
  double s = 0.0;

  auto limit_gap_at = [&](double t) {
    const SimplexVec x = interp_path(sol.X, grid, t);
    const double u_limit = inspector_payoff(inspector_best_response(x, p), x, p);
    const double u_plugin = inspector_payoff(inspector_best_response(xn, p), xn, p);
    return std::abs(u_limit - u_plugin);
  };

  auto accumulate = [&](double until) {
    if (until <= s) return;
    const double dt = grid.dt();
    double a = s;
    double prev = limit_gap_at(a);
    while (a < until) {
      double b = std::min(until, (std::floor(a / dt) + 1.0) * dt);
      if (b <= a) b = until;
      const double cur = limit_gap_at(b);
      integral += 0.5 * (prev + cur) * (b - a);
      prev = cur;
      a = b;
    }
  };

  for (const auto& e : traj.events) {
    accumulate(e.time);
    counts[static_cast<size_t>(e.from)] -= 1;
    counts[static_cast<size_t>(e.to)] += 1;
    xn[static_cast<size_t>(e.from)] = static_cast<double>(counts[static_cast<size_t>(e.from)]) / static_cast<double>(N);
    xn[static_cast<size_t>(e.to)] = static_cast<double>(counts[static_cast<size_t>(e.to)]) / static_cast<double>(N);
    s = e.time;
  }
  accumulate(traj.horizon);
  return integral / traj.horizon;
}

}  // namespace detail

// Paired deviation study. For each replication, the conforming run and every
// deviating run consume the same stream from (master_seed, r), so candidate
// event times coincide and the payoff differences cancel everything but the
// tagged inspectee's own choice.
inline EpsNashReport estimate_eps(const MfgSolution& sol, const StrategySource& base_policy,
                                  const std::string& strategy_id,
                                  const std::vector<Deviation>& family, int64_t N,
                                  const ModelParams& p, uint64_t master_seed,
                                  int64_t replications, int threads = 1) {
  if (!sol.converged)
    throw std::invalid_argument("estimate_eps: refusing a non-converged solution");
  if (replications < 2) throw std::invalid_argument("estimate_eps: replications must be >= 2");

  const int m0 = p.d() / 2;  // middle level
  const TaggedState init = matched_initial_state(sol.X.front(), N, m0);
  const double horizon = sol.grid.T;

  const size_t n_dev = family.size();
  std::vector<std::vector<double>> dev_slots(n_dev, std::vector<double>(static_cast<size_t>(replications)));
  std::vector<std::vector<double>> gain_slots(n_dev, std::vector<double>(static_cast<size_t>(replications)));
  std::vector<double> conf_slots(static_cast<size_t>(replications));
  std::vector<double> inspector_slots(static_cast<size_t>(replications));

  run_replications(replications, threads, [&](int64_t r) {
    const PopulationTrajectory conforming =
        simulate_tagged(init, base_policy, base_policy, p, horizon, master_seed, static_cast<uint64_t>(r));
    const double j_conf = finite_payoff(conforming, p, PayoffRole::tagged(), &base_policy);
    conf_slots[static_cast<size_t>(r)] = j_conf;
    inspector_slots[static_cast<size_t>(r)] = detail::inspector_path_gap(conforming, sol, p);
    for (size_t k = 0; k < n_dev; ++k) {
      const PopulationTrajectory deviating = simulate_tagged(
          init, base_policy, *family[k].source, p, horizon, master_seed, static_cast<uint64_t>(r));
      const double j_dev = finite_payoff(deviating, p, PayoffRole::tagged(), family[k].source.get());
      dev_slots[k][static_cast<size_t>(r)] = j_dev;
      gain_slots[k][static_cast<size_t>(r)] = j_dev - j_conf;
    }
  });

  EpsNashReport report;
  report.N = N;
  report.strategy_id = strategy_id;
  report.replications = replications;
  const MeanCI conf = mean_halfwidth(conf_slots);
  const MeanCI insp = mean_halfwidth(inspector_slots);
  report.inspector_gap = insp.mean;
  report.inspector_gap_half_width = insp.half_width;

  double best_gain = -std::numeric_limits<double>::infinity();
  double best_hw = 0.0;
  for (size_t k = 0; k < n_dev; ++k) {
    const MeanCI dev = mean_halfwidth(dev_slots[k]);
    const MeanCI gain = mean_halfwidth(gain_slots[k]);
    report.deviations.push_back({family[k].name, dev.mean, dev.half_width, conf.mean,
                                 conf.half_width, gain.mean, gain.half_width});
    if (gain.mean > best_gain) {
      best_gain = gain.mean;
      best_hw = gain.half_width;
    }
  }
  report.eps = std::max(0.0, best_gain);
  report.eps_half_width = best_hw;
  return report;
}

// ---------------------------------------------------------------------------
// Rate study

struct RateStudyRow {
  int64_t N = 0;
  double eps = 0.0;
  double eps_half_width = 0.0;
  double gap = 0.0;
  double gap_half_width = 0.0;
  bool eps_excluded = false;  // indistinguishable from zero at its CI
  bool gap_excluded = false;
};

struct RateStudyFit {
  bool refused = true;
  double slope = 0.0;
  double slope_half_width = 0.0;
  double intercept = 0.0;
  int points = 0;
};

struct RateStudyReport {
  double eta = 0.0;
  std::string gap_deviation;
  std::vector<RateStudyRow> rows;
  RateStudyFit gap_fit;  // primary signal: propagator gap with a smooth observable
  RateStudyFit eps_fit;  // secondary, noisier corroboration
};

namespace detail {

inline RateStudyFit fit_positive_rows(const std::vector<int64_t>& ns,
                                      const std::vector<double>& values,
                                      const std::vector<bool>& excluded) {
  std::vector<double> xs, ys;
  for (size_t i = 0; i < ns.size(); ++i) {
    if (excluded[i]) continue;
    xs.push_back(static_cast<double>(ns[i]));
    ys.push_back(values[i]);
  }
  RateStudyFit fit;
  if (xs.size() < 2) return fit;  // refused
  const LineFit lf = fit_loglog(xs, ys);
  fit.refused = false;
  fit.slope = lf.slope;
  fit.slope_half_width = lf.slope_half_width;
  fit.intercept = lf.intercept;
  fit.points = lf.points;
  return fit;
}

}  // namespace detail

// Convergence-rate study under the smoothed strategy q*_eta. The population
// plays q*_eta; its limit path is re-solved under the same policy. Per N the
// study records both the propagator gap against a fixed smooth observable and
// the deviation-family eps, then fits log-log slopes. Points whose estimate is
// indistinguishable from zero at its CI are flagged and excluded from the fit.
inline RateStudyReport rate_study(const MfgSolution& sol, double eta,
                                  const std::vector<int64_t>& n_list,
                                  const std::vector<Deviation>& family, const ModelParams& p,
                                  uint64_t master_seed, int64_t replications, int threads = 1,
                                  bool common_random_numbers = false,
                                  Observable observable = {}) {
  if (n_list.size() < 4) throw std::invalid_argument("rate_study: need at least 4 population sizes");
  if (!std::is_sorted(n_list.begin(), n_list.end()))
    throw std::invalid_argument("rate_study: population sizes must be increasing");
  if (n_list.back() < 8 * n_list.front())
    throw std::invalid_argument("rate_study: population sizes must span a factor of 8");

  const auto policy_eta =
      std::make_shared<GridStrategy>(make_mollified_policy(sol.V, sol.grid, p, eta));
  const DistPath x_eta = solve_kinetic_forward(*policy_eta, sol.X.front(), sol.grid);

  const ConstantStrategy gap_deviation = make_uniform_constant(p, 0.5 * p.Q);
  const Observable f = observable ? std::move(observable) : bundled_smooth_observable(p);
  const int m0 = p.d() / 2;

  RateStudyReport report;
  report.eta = eta;
  report.gap_deviation = "constant(Q/2)";

  std::vector<int64_t> ns;
  std::vector<double> gaps, epss;
  std::vector<bool> gap_excl, eps_excl;
  for (int64_t N : n_list) {
    RateStudyRow row;
    row.N = N;
    const uint64_t seed =
        common_random_numbers ? master_seed : derive_seed(master_seed, static_cast<uint64_t>(N));

    // An estimate within its CI of zero (plus a machine-rounding floor)
    // carries no rate information and is excluded from the fit.
    const double floor = 1e-12;
    const GapEstimate g = propagator_gap(x_eta, sol.grid, *policy_eta, gap_deviation, f, m0, N, p,
                                         seed, replications, threads);
    row.gap = g.gap;
    row.gap_half_width = g.half_width;
    row.gap_excluded = !(g.gap > g.half_width + floor);

    const EpsNashReport er = estimate_eps(sol, *policy_eta, "qstar_eta", family, N, p,
                                          seed, replications, threads);
    row.eps = er.eps;
    row.eps_half_width = er.eps_half_width;
    row.eps_excluded = !(er.eps > er.eps_half_width + floor);

    report.rows.push_back(row);
    ns.push_back(N);
    gaps.push_back(row.gap);
    epss.push_back(row.eps);
    gap_excl.push_back(row.gap_excluded);
    eps_excl.push_back(row.eps_excluded);
  }

  report.gap_fit = detail::fit_positive_rows(ns, gaps, gap_excl);
  report.eps_fit = detail::fit_positive_rows(ns, epss, eps_excl);
  return report;
}

// ---------------------------------------------------------------------------
// Mollification sweep

struct MollifyRow {
  double eta = 0.0;
  double sup_gap = 0.0;     // sup over grid times and level pairs of |q*_eta - q*|
  double payoff_gap = 0.0;  // |limit payoff under q*_eta - limit payoff under q*|
};

inline std::vector<MollifyRow> mollify_compare(const MfgSolution& sol,
                                               const std::vector<double>& etas,
                                               const ModelParams& p) {
  if (!sol.converged)
    throw std::invalid_argument("mollify_compare: refusing a non-converged solution");
  const int m0 = p.d() / 2;
  const GridStrategy qstar_policy(sol.grid, sol.qstar);
  const double base_payoff = limit_payoff(sol, qstar_policy, m0, p);

  std::vector<MollifyRow> rows;
  for (double eta : etas) {
    MollifyRow row;
    row.eta = eta;
    for (int k = 0; k <= sol.grid.K; ++k) {
      const ValueVec& phi = sol.V[static_cast<size_t>(k)];
      for (int i = 0; i < p.d(); ++i)
        for (int j = 0; j < p.d(); ++j) {
          if (i == j) continue;
          const double z = phi[static_cast<size_t>(j)] - phi[static_cast<size_t>(i)];
          row.sup_gap = std::max(row.sup_gap,
                                 std::abs(mollify_rates(z, eta, p) - optimal_rate(phi[static_cast<size_t>(i)], phi[static_cast<size_t>(j)], p.Q)));
        }
    }
    const GridStrategy policy_eta = make_mollified_policy(sol.V, sol.grid, p, eta);
    row.payoff_gap = std::abs(limit_payoff(sol, policy_eta, m0, p) - base_payoff);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mfgi
