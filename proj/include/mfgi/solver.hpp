#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mfgi/errors.hpp"
#include "mfgi/model.hpp"
#include "mfgi/strategy.hpp"
#include "mfgi/time_grid.hpp"

namespace mfgi {

using DistPath = std::vector<SimplexVec>;   // K+1 simplex points
using ValuePath = std::vector<ValueVec>;    // K+1 value slices

// Sup over nodes of the Euclidean slice distance.
inline double path_distance(const DistPath& a, const DistPath& b) {
  double worst = 0.0;
  for (size_t k = 0; k < a.size(); ++k) {
    double s = 0.0;
    for (size_t i = 0; i < a[k].size(); ++i) {
      const double e = a[k][i] - b[k][i];
      s += e * e;
    }
    worst = std::max(worst, std::sqrt(s));
  }
  return worst;
}

inline double value_path_distance(const ValuePath& a, const ValuePath& b) {
  double worst = 0.0;
  for (size_t k = 0; k < a.size(); ++k)
    for (size_t i = 0; i < a[k].size(); ++i)
      worst = std::max(worst, std::abs(a[k][i] - b[k][i]));
  return worst;
}

inline DistPath constant_path(const SimplexVec& x, int K) {
  return DistPath(static_cast<size_t>(K) + 1, x);
}

// Linear interpolation of a grid path at any t in [0, T].
inline SimplexVec interp_path(const DistPath& path, const TimeGrid& grid, double t) {
  const double s = std::clamp(t, 0.0, grid.T) / grid.dt();
  const int k = std::min(static_cast<int>(s), grid.K - 1);
  const double w = s - k;
  const SimplexVec& a = path[static_cast<size_t>(k)];
  const SimplexVec& b = path[static_cast<size_t>(k) + 1];
  SimplexVec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - w) * a[i] + w * b[i];
  return out;
}

namespace detail {

inline void check_finite_slice(const std::vector<double>& v, int node, const char* what) {
  for (double e : v)
    if (!std::isfinite(e))
      throw SolverError(std::string(what) + ": non-finite value at node " + std::to_string(node));
}

// Enforce the simplex invariants after an integration step. Drift above the
// hard tolerance is an integration error; smaller drift is snapped away so
// downstream consumers always see a clean distribution.
inline void settle_simplex(SimplexVec& x, int node, const char* what) {
  check_finite_slice(x, node, what);
  const double drift = simplex_drift(x);
  if (drift > 1e-6)
    throw SolverError(std::string(what) + ": simplex drift " + std::to_string(drift) +
                      " at node " + std::to_string(node));
  if (drift > 1e-12) snap_to_simplex(x);
}

// d/dt of a distribution under a switching matrix: dx_i = sum_j x_j q_ji.
inline void flow_rhs(const SimplexVec& x, const RateMatrix& q, std::vector<double>& out) {
  const int d = q.dim();
  for (int i = 0; i < d; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += x[static_cast<size_t>(j)] * q(j, i);
    out[static_cast<size_t>(i)] = s;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward HJB solve: dV/dt = -H(l_i, V(t,.), X(t)), V(T,.) = J_T(., X(T)),
// integrated by classical RK4 with X interpolated linearly between nodes.
inline ValuePath solve_hjb_backward(const DistPath& X, const ModelParams& p,
                                    const TimeGrid& grid) {
  const int d = p.d();
  const int K = grid.K;
  ValuePath V(static_cast<size_t>(K) + 1, ValueVec(static_cast<size_t>(d)));
  for (int i = 0; i < d; ++i)
    V[static_cast<size_t>(K)][static_cast<size_t>(i)] = terminal_payoff(i, X[static_cast<size_t>(K)], p);

  const double h = -grid.dt();
  ValueVec k1(d), k2(d), k3(d), k4(d), tmp(d);
  SimplexVec xm(static_cast<size_t>(d));

  auto rhs = [&](const ValueVec& v, const SimplexVec& x, ValueVec& out) {
    const double pa = detection_prob(inspector_best_response(x, p), p);
    for (int i = 0; i < d; ++i)
      out[static_cast<size_t>(i)] = -hamiltonian_with_detection(i, v, pa, p);
  };

  for (int k = K; k >= 1; --k) {
    const SimplexVec& xa = X[static_cast<size_t>(k)];
    const SimplexVec& xb = X[static_cast<size_t>(k) - 1];
    for (int i = 0; i < d; ++i)
      xm[static_cast<size_t>(i)] = 0.5 * (xa[static_cast<size_t>(i)] + xb[static_cast<size_t>(i)]);

    const ValueVec& v = V[static_cast<size_t>(k)];
    rhs(v, xa, k1);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = v[static_cast<size_t>(i)] + 0.5 * h * k1[static_cast<size_t>(i)];
    rhs(tmp, xm, k2);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = v[static_cast<size_t>(i)] + 0.5 * h * k2[static_cast<size_t>(i)];
    rhs(tmp, xm, k3);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = v[static_cast<size_t>(i)] + h * k3[static_cast<size_t>(i)];
    rhs(tmp, xb, k4);

    ValueVec& next = V[static_cast<size_t>(k) - 1];
    for (int i = 0; i < d; ++i)
      next[static_cast<size_t>(i)] =
          v[static_cast<size_t>(i)] +
          h / 6.0 * (k1[static_cast<size_t>(i)] + 2.0 * k2[static_cast<size_t>(i)] +
                     2.0 * k3[static_cast<size_t>(i)] + k4[static_cast<size_t>(i)]);
    detail::check_finite_slice(next, k - 1, "solve_hjb_backward");
  }
  return V;
}

// ---------------------------------------------------------------------------
// Forward kinetic solve: dX_i/dt = sum_j X_j q_ji(t, X), RK4 with the policy
// evaluated at stage times and stage states.
inline DistPath solve_kinetic_forward(const StrategySource& policy, const SimplexVec& x0,
                                      const TimeGrid& grid) {
  const int d = static_cast<int>(x0.size());
  const int K = grid.K;
  DistPath X(static_cast<size_t>(K) + 1);
  X[0] = x0;
  detail::settle_simplex(X[0], 0, "solve_kinetic_forward");

  const double h = grid.dt();
  std::vector<double> k1(d), k2(d), k3(d), k4(d);
  SimplexVec tmp(static_cast<size_t>(d));
  RateMatrix q(d);

  auto rhs = [&](double t, const SimplexVec& x, std::vector<double>& out) {
    policy.rates_into(t, x, q);
    detail::flow_rhs(x, q, out);
  };

  for (int k = 0; k < K; ++k) {
    const double t0 = grid.node(k);
    const double t1 = grid.node(k + 1);
    const double tm = 0.5 * (t0 + t1);
    const SimplexVec& x = X[static_cast<size_t>(k)];

    rhs(t0, x, k1);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + 0.5 * h * k1[static_cast<size_t>(i)];
    rhs(tm, tmp, k2);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + 0.5 * h * k2[static_cast<size_t>(i)];
    rhs(tm, tmp, k3);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + h * k3[static_cast<size_t>(i)];
    rhs(t1, tmp, k4);

    SimplexVec& next = X[static_cast<size_t>(k) + 1];
    next.resize(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i)
      next[static_cast<size_t>(i)] =
          x[static_cast<size_t>(i)] +
          h / 6.0 * (k1[static_cast<size_t>(i)] + 2.0 * k2[static_cast<size_t>(i)] +
                     2.0 * k3[static_cast<size_t>(i)] + k4[static_cast<size_t>(i)]);
    detail::settle_simplex(next, k + 1, "solve_kinetic_forward");
  }
  return X;
}

// Forward Kolmogorov equation of a single chain whose rates follow `policy`
// along the frozen environment path X: d law_j/dt = sum_i law_i q_ij(t, X(t)).
inline DistPath solve_law_along(const DistPath& X, const TimeGrid& grid,
                                const StrategySource& policy, int initial_level) {
  const int d = static_cast<int>(X.front().size());
  const int K = grid.K;
  DistPath law(static_cast<size_t>(K) + 1);
  law[0].assign(static_cast<size_t>(d), 0.0);
  law[0][static_cast<size_t>(initial_level)] = 1.0;

  const double h = grid.dt();
  std::vector<double> k1(d), k2(d), k3(d), k4(d);
  SimplexVec tmp(static_cast<size_t>(d)), xm(static_cast<size_t>(d));
  RateMatrix q(d);

  auto rhs = [&](double t, const SimplexVec& env, const SimplexVec& rho, std::vector<double>& out) {
    policy.rates_into(t, env, q);
    const int dd = q.dim();
    for (int j = 0; j < dd; ++j) {
      double s = 0.0;
      for (int i = 0; i < dd; ++i) s += rho[static_cast<size_t>(i)] * q(i, j);
      out[static_cast<size_t>(j)] = s;
    }
  };

  for (int k = 0; k < K; ++k) {
    const double t0 = grid.node(k);
    const double t1 = grid.node(k + 1);
    const double tm = 0.5 * (t0 + t1);
    const SimplexVec& xa = X[static_cast<size_t>(k)];
    const SimplexVec& xb = X[static_cast<size_t>(k) + 1];
    for (int i = 0; i < d; ++i)
      xm[static_cast<size_t>(i)] = 0.5 * (xa[static_cast<size_t>(i)] + xb[static_cast<size_t>(i)]);

    const SimplexVec& rho = law[static_cast<size_t>(k)];
    rhs(t0, xa, rho, k1);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = rho[static_cast<size_t>(i)] + 0.5 * h * k1[static_cast<size_t>(i)];
    rhs(tm, xm, tmp, k2);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = rho[static_cast<size_t>(i)] + 0.5 * h * k2[static_cast<size_t>(i)];
    rhs(tm, xm, tmp, k3);
    for (int i = 0; i < d; ++i) tmp[static_cast<size_t>(i)] = rho[static_cast<size_t>(i)] + h * k3[static_cast<size_t>(i)];
    rhs(t1, xb, tmp, k4);

    SimplexVec& next = law[static_cast<size_t>(k) + 1];
    next.resize(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i)
      next[static_cast<size_t>(i)] =
          rho[static_cast<size_t>(i)] +
          h / 6.0 * (k1[static_cast<size_t>(i)] + 2.0 * k2[static_cast<size_t>(i)] +
                     2.0 * k3[static_cast<size_t>(i)] + k4[static_cast<size_t>(i)]);
    detail::settle_simplex(next, k + 1, "solve_law_along");
  }
  return law;
}

// ---------------------------------------------------------------------------
// Coupled system

struct MfgSolution {
  TimeGrid grid;
  DistPath X;                      // equilibrium crime-distribution path
  ValuePath V;                     // inspectee value function at nodes
  std::vector<double> alpha;       // inspector best response along X
  std::vector<RateMatrix> qstar;   // clamped optimal rates along V
  double residual = 0.0;           // sup_k |Gamma(X) - X| at acceptance
  int iterations = 0;
  double contraction_estimate = 0.0;
  bool converged = false;
  std::vector<double> residual_history;
};

// One application of the fixed-point map: X -> backward HJB -> optimal rates
// -> forward kinetic solve started from X(t_0).
inline DistPath gamma_map(const DistPath& X, const ModelParams& p, const TimeGrid& grid) {
  const ValuePath V = solve_hjb_backward(X, p, grid);
  const GridStrategy policy = make_optimal_policy(V, grid, p);
  return solve_kinetic_forward(policy, X.front(), grid);
}

struct FixedPointOptions {
  double tol = 1e-9;
  int max_iter = 500;
  double damping = 0.0;                  // X <- (1-theta) Gamma(X) + theta X
  std::optional<DistPath> initial_path;  // default: constant path at x0
};

// Damped Picard iteration on the distribution path. Existence holds for any
// horizon but the contraction argument only covers short horizons, so the
// solver reports non-convergence loudly instead of guessing: `converged`
// is false and the residual history is preserved.
inline MfgSolution solve_mfg_fixed_point(const ModelParams& p, const TimeGrid& grid,
                                         const SimplexVec& x0,
                                         const FixedPointOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw std::invalid_argument("solve_mfg_fixed_point: tol must be > 0");
  if (opt.max_iter < 1) throw std::invalid_argument("solve_mfg_fixed_point: max_iter must be >= 1");
  if (!(opt.damping >= 0.0 && opt.damping < 1.0))
    throw std::invalid_argument("solve_mfg_fixed_point: damping must be in [0, 1)");

  MfgSolution sol;
  sol.grid = grid;

  // The initial slice is the problem's boundary condition, not part of the
  // guess; pin it so every iterate solves the same problem.
  DistPath initial = opt.initial_path ? *opt.initial_path : constant_path(x0, grid.K);
  initial.front() = x0;
  DistPath X = initial;
  double theta = opt.damping;
  int rises = 0;
  bool restarted = false;

  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    DistPath G = gamma_map(X, p, grid);
    const double r = path_distance(G, X);
    sol.residual_history.push_back(r);
    sol.iterations = iter;
    if (sol.residual_history.size() >= 2) {
      const double prev = sol.residual_history[sol.residual_history.size() - 2];
      if (prev > 0.0) sol.contraction_estimate = r / prev;
      if (r > prev) ++rises;
    }
    if (r < opt.tol) {
      sol.converged = true;
      sol.residual = r;
      sol.X = std::move(X);
      break;
    }
    // Oscillation guard: restart once, damped, if the residual keeps rising.
    if (rises >= 5 && !restarted && theta < 0.5) {
      restarted = true;
      theta = 0.5;
      rises = 0;
      X = initial;
      continue;
    }
    if (theta == 0.0) {
      X = std::move(G);
    } else {
      for (size_t k = 0; k < X.size(); ++k)
        for (size_t i = 0; i < X[k].size(); ++i)
          X[k][i] = (1.0 - theta) * G[k][i] + theta * X[k][i];
    }
  }

  if (!sol.converged) {
    sol.residual = sol.residual_history.empty() ? 0.0 : sol.residual_history.back();
    sol.X = std::move(X);
  }

  sol.V = solve_hjb_backward(sol.X, p, grid);
  sol.alpha.resize(static_cast<size_t>(grid.K) + 1);
  sol.qstar.reserve(static_cast<size_t>(grid.K) + 1);
  for (int k = 0; k <= grid.K; ++k) {
    sol.alpha[static_cast<size_t>(k)] = inspector_best_response(sol.X[static_cast<size_t>(k)], p);
    sol.qstar.push_back(optimal_rates(sol.V[static_cast<size_t>(k)], p));
  }
  return sol;
}

inline MfgSolution solve_mfg_fixed_point(const ModelParams& p, const TimeGrid& grid,
                                         const FixedPointOptions& opt = {}) {
  return solve_mfg_fixed_point(p, grid, p.initial_distribution(), opt);
}

// Law of a tagged inspectee that applies `deviation` while the population
// follows the frozen equilibrium path of `sol`.
inline DistPath solve_tagged_law_forward(const MfgSolution& sol, const StrategySource& deviation,
                                         int initial_level, const TimeGrid& grid) {
  return solve_law_along(sol.X, grid, deviation, initial_level);
}

// Exact limiting expected payoff of a tagged inspectee using `strategy`:
// trapezoid in time of the law-weighted running payoff plus the law-weighted
// terminal payoff.
inline double limit_payoff(const MfgSolution& sol, const StrategySource& strategy,
                           int initial_level, const ModelParams& p) {
  const TimeGrid& grid = sol.grid;
  const int d = p.d();
  const DistPath law = solve_tagged_law_forward(sol, strategy, initial_level, grid);

  RateMatrix q(d);
  std::vector<double> node_value(static_cast<size_t>(grid.K) + 1);
  for (int k = 0; k <= grid.K; ++k) {
    const SimplexVec& x = sol.X[static_cast<size_t>(k)];
    strategy.rates_into(grid.node(k), x, q);
    double g = 0.0;
    for (int i = 0; i < d; ++i)
      g += law[static_cast<size_t>(k)][static_cast<size_t>(i)] * running_payoff(i, x, q.row(i), p);
    node_value[static_cast<size_t>(k)] = g;
  }

  double integral = 0.0;
  for (int k = 0; k < grid.K; ++k)
    integral += 0.5 * (node_value[static_cast<size_t>(k)] + node_value[static_cast<size_t>(k) + 1]) * grid.dt();

  double terminal = 0.0;
  for (int i = 0; i < d; ++i)
    terminal += law[static_cast<size_t>(grid.K)][static_cast<size_t>(i)] *
                terminal_payoff(i, sol.X[static_cast<size_t>(grid.K)], p);
  return integral + terminal;
}

}  // namespace mfgi
