#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mfgi/errors.hpp"
#include "mfgi/model.hpp"
#include "mfgi/montecarlo.hpp"
#include "mfgi/rng.hpp"
#include "mfgi/solver.hpp"
#include "mfgi/strategy.hpp"

namespace mfgi {

struct PopulationState {
  std::vector<int64_t> counts;  // inspectees per crime level

  int64_t total() const { return std::accumulate(counts.begin(), counts.end(), int64_t{0}); }

  SimplexVec empirical() const {
    const double n = static_cast<double>(total());
    SimplexVec x(counts.size());
    for (size_t i = 0; i < counts.size(); ++i) x[i] = static_cast<double>(counts[i]) / n;
    return x;
  }
};

// The tagged inspectee is included in the population counts.
struct TaggedState {
  PopulationState pop;
  int tagged_level = -1;
};

struct TrajectoryEvent {
  double time;
  int32_t from;
  int32_t to;
  bool tagged;
};

struct PopulationTrajectory {
  PopulationState initial;
  int initial_tagged_level = -1;  // -1: no tagged inspectee
  double horizon = 0.0;
  uint64_t master_seed = 0;
  uint64_t replication = 0;
  std::vector<TrajectoryEvent> events;
};

// Deterministic largest-remainder rounding of N*x onto integer counts.
inline PopulationState round_to_counts(const SimplexVec& x, int64_t N) {
  const size_t d = x.size();
  PopulationState s;
  s.counts.assign(d, 0);
  std::vector<std::pair<double, size_t>> remainders(d);
  int64_t assigned = 0;
  for (size_t i = 0; i < d; ++i) {
    const double target = x[i] * static_cast<double>(N);
    s.counts[i] = static_cast<int64_t>(std::floor(target));
    assigned += s.counts[i];
    remainders[i] = {target - std::floor(target), i};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int64_t k = 0; k < N - assigned; ++k) s.counts[remainders[static_cast<size_t>(k)].second] += 1;
  return s;
}

// Population counts from x0 with the tagged inspectee guaranteed present at m0.
inline TaggedState matched_initial_state(const SimplexVec& x0, int64_t N, int m0) {
  TaggedState init;
  init.pop = round_to_counts(x0, N);
  init.tagged_level = m0;
  if (init.pop.counts[static_cast<size_t>(m0)] == 0) {
    size_t donor = 0;
    for (size_t i = 1; i < init.pop.counts.size(); ++i)
      if (init.pop.counts[i] > init.pop.counts[donor]) donor = i;
    init.pop.counts[donor] -= 1;
    init.pop.counts[static_cast<size_t>(m0)] += 1;
  }
  return init;
}

namespace detail {

inline void check_policy_rows(const RateMatrix& q, double Q, const char* who) {
  const int d = q.dim();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      if (i == j) continue;
      const double e = q(i, j);
      if (!(e >= -1e-9 && e <= Q + 1e-9))
        throw PolicyError(std::string(who) + ": rate outside [0, Q]");
    }
}

// Exact event-driven sampling by thinning. Candidate times arrive at the
// dominating rate N*(d-1)*Q; a candidate selects transition (i -> j) with
// probability (available_i * q_ij) / Lambda and is rejected otherwise. Every
// candidate consumes exactly two draws, so two runs from the same stream see
// identical candidate times whatever they accept.
inline PopulationTrajectory simulate_core(const PopulationState& init, int tagged_level,
                                          const StrategySource& base_policy,
                                          const StrategySource* deviation,
                                          const ModelParams& p, double horizon,
                                          uint64_t master_seed, uint64_t replication) {
  const int d = p.d();
  PopulationTrajectory traj;
  traj.initial = init;
  traj.initial_tagged_level = tagged_level;
  traj.horizon = horizon;
  traj.master_seed = master_seed;
  traj.replication = replication;

  const int64_t N = init.total();
  const double lambda_dom = static_cast<double>(N) * (d - 1) * p.Q;
  if (!(lambda_dom > 0.0)) return traj;

  Rng rng(master_seed, replication);
  std::vector<int64_t> counts = init.counts;
  SimplexVec x = init.empirical();
  int tag = tagged_level;
  RateMatrix qb(d), qd(d);

  double t = 0.0;
  while (true) {
    t += rng.exponential(lambda_dom);
    if (t >= horizon) break;

    base_policy.rates_into(t, x, qb);
    check_policy_rows(qb, p.Q, "population policy");
    if (tag >= 0) {
      deviation->rates_into(t, x, qd);
      check_policy_rows(qd, p.Q, "tagged deviation");
    }

    const double u = rng.uniform01() * lambda_dom;
    double acc = 0.0;
    int from = -1, to = -1;
    bool tagged_jump = false;

    for (int i = 0; i < d && from < 0; ++i) {
      const double avail = static_cast<double>(counts[static_cast<size_t>(i)] - (i == tag ? 1 : 0));
      if (avail <= 0.0) continue;
      for (int j = 0; j < d; ++j) {
        if (j == i) continue;
        acc += avail * qb(i, j);
        if (u < acc) {
          from = i;
          to = j;
          break;
        }
      }
    }
    if (from < 0 && tag >= 0) {
      for (int j = 0; j < d; ++j) {
        if (j == tag) continue;
        acc += qd(tag, j);
        if (u < acc) {
          from = tag;
          to = j;
          tagged_jump = true;
          break;
        }
      }
    }
    if (from < 0) continue;  // thinning rejection

    counts[static_cast<size_t>(from)] -= 1;
    counts[static_cast<size_t>(to)] += 1;
    const double n = static_cast<double>(N);
    x[static_cast<size_t>(from)] = static_cast<double>(counts[static_cast<size_t>(from)]) / n;
    x[static_cast<size_t>(to)] = static_cast<double>(counts[static_cast<size_t>(to)]) / n;
    if (tagged_jump) tag = to;
    traj.events.push_back({t, from, to, tagged_jump});
  }
  return traj;
}

}  // namespace detail

inline PopulationTrajectory simulate_population(const PopulationState& init,
                                                const StrategySource& policy,
                                                const ModelParams& p, double horizon,
                                                uint64_t master_seed, uint64_t replication) {
  return detail::simulate_core(init, -1, policy, nullptr, p, horizon, master_seed, replication);
}

// Tagged-pair process: everyone at level i contributes (n_i - [i == tagged])
// conforming transitions, the tagged inspectee moves at the deviation rates,
// and tagged jumps update both the counts and the tagged level.
inline PopulationTrajectory simulate_tagged(const TaggedState& init,
                                            const StrategySource& base_policy,
                                            const StrategySource& deviation,
                                            const ModelParams& p, double horizon,
                                            uint64_t master_seed, uint64_t replication) {
  if (init.tagged_level < 0 || init.pop.counts[static_cast<size_t>(init.tagged_level)] < 1)
    throw std::invalid_argument("simulate_tagged: tagged inspectee must be present");
  return detail::simulate_core(init.pop, init.tagged_level, base_policy, &deviation, p, horizon,
                               master_seed, replication);
}

// ---------------------------------------------------------------------------
// Pathwise payoff

enum class RoleKind { Tagged, FixedLevel };

struct PayoffRole {
  RoleKind kind = RoleKind::Tagged;
  int level = 0;

  static PayoffRole tagged() { return {RoleKind::Tagged, 0}; }
  static PayoffRole fixed(int level) { return {RoleKind::FixedLevel, level}; }
};

namespace detail {

// Integral over [a, b] of the subject's quadratic switching cost, with the
// population state frozen at x. Policies are piecewise linear in time, so
// per-piece Simpson between the policy knots is exact.
inline double control_cost_integral(const StrategySource& policy, int level, double a, double b,
                                    const SimplexVec& x, RateMatrix& scratch,
                                    std::vector<double>& knots) {
  if (b <= a) return 0.0;
  knots.clear();
  knots.push_back(a);
  policy.append_knots(a, b, knots);
  knots.push_back(b);

  auto cost_at = [&](double t) {
    policy.rates_into(t, x, scratch);
    double c = 0.0;
    for (int j = 0; j < scratch.dim(); ++j) {
      if (j == level) continue;
      c += scratch(level, j) * scratch(level, j);
    }
    return c;
  };

  double integral = 0.0;
  for (size_t k = 0; k + 1 < knots.size(); ++k) {
    const double u = knots[k], v = knots[k + 1];
    integral += (v - u) / 6.0 * (cost_at(u) + 4.0 * cost_at(0.5 * (u + v)) + cost_at(v));
  }
  return integral;
}

}  // namespace detail

// Pathwise payoff of one subject along a trajectory. The empirical measure is
// piecewise constant between events, so the detection part is an exact finite
// sum; the subject's switching cost integrates the (time-varying) policy
// exactly between its knots. The inspector budget along the path is the
// best response to the realized empirical measure.
inline double finite_payoff(const PopulationTrajectory& traj, const ModelParams& p,
                            PayoffRole role, const StrategySource* subject_policy = nullptr) {
  if (role.kind == RoleKind::Tagged && traj.initial_tagged_level < 0)
    throw std::invalid_argument("finite_payoff: trajectory has no tagged inspectee");

  std::vector<int64_t> counts = traj.initial.counts;
  SimplexVec x = traj.initial.empirical();
  int tag = traj.initial_tagged_level;
  const int64_t N = traj.initial.total();

  RateMatrix scratch(p.d());
  std::vector<double> knots;
  double payoff = 0.0;
  double s = 0.0;

  auto accumulate = [&](double until) {
    const int level = role.kind == RoleKind::Tagged ? tag : role.level;
    const double pa = detection_prob(inspector_best_response(x, p), p);
    payoff += (until - s) * p.levels[static_cast<size_t>(level)] * (1.0 - (1.0 + p.sigma) * pa);
    if (subject_policy)
      payoff -= detail::control_cost_integral(*subject_policy, level, s, until, x, scratch, knots);
  };

  for (const auto& e : traj.events) {
    accumulate(e.time);
    counts[static_cast<size_t>(e.from)] -= 1;
    counts[static_cast<size_t>(e.to)] += 1;
    x[static_cast<size_t>(e.from)] = static_cast<double>(counts[static_cast<size_t>(e.from)]) / static_cast<double>(N);
    x[static_cast<size_t>(e.to)] = static_cast<double>(counts[static_cast<size_t>(e.to)]) / static_cast<double>(N);
    if (e.tagged) tag = e.to;
    s = e.time;
  }
  accumulate(traj.horizon);

  const int level = role.kind == RoleKind::Tagged ? tag : role.level;
  payoff += terminal_payoff(level, x, p);
  return payoff;
}

struct PayoffEstimate {
  double mean = 0.0;
  double half_width = 0.0;  // 95% normal CI
  int64_t replications = 0;
};

// Monte Carlo payoff of the tagged inspectee playing `deviation` against a
// conforming population. Replication r draws its stream from (master_seed, r).
inline PayoffEstimate estimate_payoff(const TaggedState& init, const StrategySource& base_policy,
                                      const StrategySource& deviation, PayoffRole role,
                                      const ModelParams& p, double horizon, uint64_t master_seed,
                                      int64_t replications, int threads = 1) {
  if (replications < 2) throw std::invalid_argument("estimate_payoff: replications must be >= 2");
  std::vector<double> slots(static_cast<size_t>(replications));
  run_replications(replications, threads, [&](int64_t r) {
    const PopulationTrajectory traj =
        simulate_tagged(init, base_policy, deviation, p, horizon, master_seed, static_cast<uint64_t>(r));
    slots[static_cast<size_t>(r)] =
        finite_payoff(traj, p, role, role.kind == RoleKind::Tagged ? &deviation : nullptr);
  });
  const MeanCI ci = mean_halfwidth(slots);
  return {ci.mean, ci.half_width, replications};
}

// ---------------------------------------------------------------------------
// Propagator gap

using Observable = std::function<double(const SimplexVec&, int)>;

struct GapEstimate {
  double gap = 0.0;
  double half_width = 0.0;  // CI of the Monte Carlo side
  double mc_mean = 0.0;
  double limit_value = 0.0;
  int64_t replications = 0;
};

// |E f(X^N(T), tagged level) - sum_i law_i(T) f(X(T), l_i)|: the finite-N
// expectation against the limit pair (deterministic path, tagged law). The
// half-width separates Monte Carlo noise from the systematic bias.
inline GapEstimate propagator_gap(const DistPath& x_limit, const TimeGrid& grid,
                                  const StrategySource& population_policy,
                                  const StrategySource& deviation, const Observable& f, int m0,
                                  int64_t N, const ModelParams& p, uint64_t master_seed,
                                  int64_t replications, int threads = 1) {
  const TaggedState init = matched_initial_state(x_limit.front(), N, m0);

  std::vector<double> slots(static_cast<size_t>(replications));
  run_replications(replications, threads, [&](int64_t r) {
    const PopulationTrajectory traj = simulate_tagged(init, population_policy, deviation, p,
                                                      grid.T, master_seed, static_cast<uint64_t>(r));
    SimplexVec x = traj.initial.empirical();
    std::vector<int64_t> counts = traj.initial.counts;
    int tag = traj.initial_tagged_level;
    for (const auto& e : traj.events) {
      counts[static_cast<size_t>(e.from)] -= 1;
      counts[static_cast<size_t>(e.to)] += 1;
      if (e.tagged) tag = e.to;
    }
    for (size_t i = 0; i < x.size(); ++i)
      x[i] = static_cast<double>(counts[i]) / static_cast<double>(N);
    slots[static_cast<size_t>(r)] = f(x, tag);
  });
  const MeanCI ci = mean_halfwidth(slots);

  const DistPath law = solve_law_along(x_limit, grid, deviation, m0);
  double limit_value = 0.0;
  for (int i = 0; i < p.d(); ++i)
    limit_value += law.back()[static_cast<size_t>(i)] * f(x_limit.back(), i);

  GapEstimate g;
  g.mc_mean = ci.mean;
  g.limit_value = limit_value;
  g.gap = std::abs(ci.mean - limit_value);
  g.half_width = ci.half_width;
  g.replications = replications;
  return g;
}

inline GapEstimate propagator_gap(const MfgSolution& sol, const StrategySource& deviation,
                                  const Observable& f, int m0, int64_t N, const ModelParams& p,
                                  uint64_t master_seed, int64_t replications, int threads = 1) {
  const GridStrategy qstar_policy(sol.grid, sol.qstar);
  return propagator_gap(sol.X, sol.grid, qstar_policy, deviation, f, m0, N, p, master_seed,
                        replications, threads);
}

// Bundled smooth observable for the convergence studies: a quadratic in the
// crime exposure centered at the starting exposure. The vanishing gradient at
// the center makes the finite-size gap curvature-dominated, so it stands out
// against Monte Carlo noise at any population size.
inline Observable bundled_smooth_observable(const ModelParams& p) {
  const double l_max = p.levels.back() > 0.0 ? p.levels.back() : 1.0;
  const std::vector<double> levels = p.levels;
  const SimplexVec x0 = p.initial_distribution();
  double s0 = 0.0;
  for (size_t i = 0; i < x0.size(); ++i) s0 += levels[i] * x0[i];
  const double center = s0 / l_max;
  return [levels, l_max, center](const SimplexVec& x, int /*level*/) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += levels[i] * x[i];
    const double u = s / l_max - center;
    return 4.0 * u * u;
  };
}

}  // namespace mfgi
