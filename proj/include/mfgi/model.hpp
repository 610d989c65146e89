#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mfgi/errors.hpp"

namespace mfgi {

// A point of the probability simplex over crime levels, and a value-function
// slice over the same levels. Plain vectors with validators; the named aliases
// keep call sites readable.
using SimplexVec = std::vector<double>;
using ValueVec = std::vector<double>;

enum class DetectionFamily { Exponential };

// Detection probability P(alpha) = p_max * (1 - exp(-lambda * alpha)).
// Increasing and strictly concave on [0, F], with a closed-form inverse of P'.
struct DetectionSpec {
  DetectionFamily family = DetectionFamily::Exponential;
  double p_max = 0.945;  // detection ceiling, must be in (0, 1]
  double lambda = 1.0;   // saturation rate per unit budget, > 0
};

enum class TerminalFamily { Zero, Linear };

// Terminal payoff J_T(l_i, x). Zero, or a*l_i + b*<levels, x>; both families
// are Lipschitz in both arguments.
struct TerminalSpec {
  TerminalFamily family = TerminalFamily::Zero;
  double a = 0.0;
  double b = 0.0;
};

struct ModelParams {
  std::vector<double> levels{0.0, 1.0, 2.0};  // crime-level profit rates, strictly increasing, >= 0
  double Q = 1.0;      // cap on off-diagonal switching rates (1/time)
  double F = 5.0;      // inspection budget cap
  double sigma = 1.0;  // fine multiplier
  double L = 1.0;      // aggregate fine weight carried by the inspector payoff
  double T = 1.0;      // horizon
  DetectionSpec detection;
  TerminalSpec terminal;
  SimplexVec x0;       // initial crime distribution; empty means uniform

  int d() const { return static_cast<int>(levels.size()); }

  SimplexVec initial_distribution() const {
    if (!x0.empty()) return x0;
    return SimplexVec(levels.size(), 1.0 / static_cast<double>(levels.size()));
  }

  std::vector<std::string> validation_errors() const;
  void validate() const {
    auto v = validation_errors();
    if (!v.empty()) throw ValidationError(std::move(v));
  }
};

// ---------------------------------------------------------------------------
// Simplex helpers

inline double simplex_drift(const SimplexVec& x) {
  double sum = 0.0, worst_neg = 0.0;
  for (double xi : x) {
    sum += xi;
    worst_neg = std::min(worst_neg, xi);
  }
  return std::max(std::abs(sum - 1.0), -worst_neg);
}

inline bool simplex_ok(const SimplexVec& x, double tol = 1e-9) {
  return !x.empty() && simplex_drift(x) <= tol;
}

// Clamp tiny negatives to zero and renormalize the mass to one.
inline void snap_to_simplex(SimplexVec& x) {
  double sum = 0.0;
  for (double& xi : x) {
    if (xi < 0.0) xi = 0.0;
    sum += xi;
  }
  for (double& xi : x) xi /= sum;
}

inline SimplexVec uniform_simplex(int d) {
  return SimplexVec(static_cast<size_t>(d), 1.0 / d);
}

inline std::vector<std::string> ModelParams::validation_errors() const {
  std::vector<std::string> v;
  if (levels.empty()) v.push_back("levels: must contain at least one entry");
  for (size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 0.0) {
      v.push_back("levels: entries must be >= 0");
      break;
    }
  }
  for (size_t i = 1; i < levels.size(); ++i) {
    if (!(levels[i] > levels[i - 1])) {
      v.push_back("levels: entries must be strictly increasing");
      break;
    }
  }
  if (!(Q > 0.0)) v.push_back("Q: must be > 0");
  if (!(F > 0.0)) v.push_back("F: must be > 0");
  if (!(sigma > 0.0)) v.push_back("sigma: must be > 0");
  if (!(L > 0.0)) v.push_back("L: must be > 0");
  if (!(T > 0.0)) v.push_back("T: must be > 0");
  if (!(detection.p_max > 0.0 && detection.p_max <= 1.0))
    v.push_back("detection.p_max: must be in (0, 1]");
  if (!(detection.lambda > 0.0)) v.push_back("detection.lambda: must be > 0");
  if (!x0.empty()) {
    if (x0.size() != levels.size())
      v.push_back("x0: size must match levels");
    else if (!simplex_ok(x0))
      v.push_back("x0: must lie on the probability simplex");
  }
  return v;
}

// ---------------------------------------------------------------------------
// RateMatrix: d x d switching-rate matrix. Off-diagonal entries live in
// [0, Q]; each diagonal entry equals minus its off-diagonal row sum.

class RateMatrix {
 public:
  RateMatrix() = default;
  explicit RateMatrix(int d) : d_(d), q_(static_cast<size_t>(d) * d, 0.0) {}

  int dim() const { return d_; }
  double operator()(int i, int j) const { return q_[static_cast<size_t>(i) * d_ + j]; }
  double& operator()(int i, int j) { return q_[static_cast<size_t>(i) * d_ + j]; }
  std::span<const double> row(int i) const {
    return {q_.data() + static_cast<size_t>(i) * d_, static_cast<size_t>(d_)};
  }

  // q_ii = -sum_{j != i} q_ij, so rows sum to zero exactly.
  void finalize_diagonal() {
    for (int i = 0; i < d_; ++i) {
      double off = 0.0;
      for (int j = 0; j < d_; ++j)
        if (j != i) off += (*this)(i, j);
      (*this)(i, i) = -off;
    }
  }

  std::vector<std::string> validation_errors(double Q, double tol = 1e-12) const {
    std::vector<std::string> v;
    for (int i = 0; i < d_; ++i) {
      double sum = 0.0;
      for (int j = 0; j < d_; ++j) {
        double e = (*this)(i, j);
        sum += e;
        if (j != i && (e < -tol || e > Q + tol))
          v.push_back("rate(" + std::to_string(i) + "," + std::to_string(j) +
                      ") outside [0, Q]");
      }
      if (std::abs(sum) > tol)
        v.push_back("row " + std::to_string(i) + " does not sum to zero");
    }
    return v;
  }

  friend bool operator==(const RateMatrix& a, const RateMatrix& b) {
    return a.d_ == b.d_ && a.q_ == b.q_;
  }

 private:
  int d_ = 0;
  std::vector<double> q_;
};

// ---------------------------------------------------------------------------
// Detection function

inline double detection_prob(double alpha, const DetectionSpec& spec, double budget_cap) {
  const double slack = 1e-12 * std::max(1.0, budget_cap);
  if (alpha < -slack || alpha > budget_cap + slack)
    throw std::domain_error("detection_prob: budget outside [0, F]");
  return spec.p_max * (1.0 - std::exp(-spec.lambda * alpha));
}

inline double detection_prob(double alpha, const ModelParams& p) {
  return detection_prob(alpha, p.detection, p.F);
}

// P'(alpha), used by the best-response inversion and the concavity checks.
inline double detection_prob_prime(double alpha, const DetectionSpec& spec) {
  return spec.p_max * spec.lambda * std::exp(-spec.lambda * alpha);
}

// Aggregate crime exposure S = <levels, x>.
inline double crime_exposure(const SimplexVec& x, const ModelParams& p) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += p.levels[i] * x[i];
  return s;
}

// ---------------------------------------------------------------------------
// Inspector side

// U(alpha, x) = -alpha + L*((1+sigma) P(alpha) - 1) * <levels, x>.
inline double inspector_payoff(double alpha, const SimplexVec& x, const ModelParams& p) {
  const double pa = detection_prob(alpha, p);  // also enforces the domain
  const double s = crime_exposure(x, p);
  return -alpha + p.L * ((1.0 + p.sigma) * pa - 1.0) * s;
}

// Unique maximiser of U(., x) over [0, F]. For the exponential family
// (P')^{-1}(y) = log(p_max*lambda/y)/lambda; the result is clamped to the
// budget box, and zero exposure yields a zero budget outright.
inline double inspector_best_response(const SimplexVec& x, const ModelParams& p) {
  const double s = crime_exposure(x, p);
  if (s <= 0.0) return 0.0;
  const double y = 1.0 / (p.L * (1.0 + p.sigma) * s);
  const double arg = p.detection.p_max * p.detection.lambda / y;
  if (arg <= 1.0) return 0.0;  // marginal value of the first unit is already <= 0
  const double unconstrained = std::log(arg) / p.detection.lambda;
  return std::clamp(unconstrained, 0.0, p.F);
}

// ---------------------------------------------------------------------------
// Inspectee side

// psi(z) = max_{q in [0,Q]} (z q - q^2): the per-pair switching gain inside
// the Hamiltonian, obtained by substituting the clamped maximiser.
inline double switching_gain(double z, double Q) {
  if (z < 0.0) return 0.0;
  if (z <= 2.0 * Q) return 0.25 * z * z;
  return Q * z - Q * Q;
}

// Optimal rate out of level i toward level j: clamp((phi_j - phi_i)/2, 0, Q).
inline double optimal_rate(double phi_i, double phi_j, double Q) {
  return std::clamp(0.5 * (phi_j - phi_i), 0.0, Q);
}

inline void optimal_rates_row(const ValueVec& phi, int i, double Q, std::span<double> row) {
  const int d = static_cast<int>(phi.size());
  double off = 0.0;
  for (int j = 0; j < d; ++j) {
    if (j == i) continue;
    row[static_cast<size_t>(j)] = optimal_rate(phi[i], phi[j], Q);
    off += row[static_cast<size_t>(j)];
  }
  row[static_cast<size_t>(i)] = -off;
}

inline RateMatrix optimal_rates(const ValueVec& phi, const ModelParams& p) {
  RateMatrix m(p.d());
  std::vector<double> row(static_cast<size_t>(p.d()));
  for (int i = 0; i < p.d(); ++i) {
    optimal_rates_row(phi, i, p.Q, row);
    for (int j = 0; j < p.d(); ++j) m(i, j) = row[static_cast<size_t>(j)];
  }
  return m;
}

// Hamiltonian with the detection factor already evaluated; the HJB right-hand
// side reuses one detection evaluation across all levels of a slice.
inline double hamiltonian_with_detection(int i, const ValueVec& phi, double detection_at_best,
                                         const ModelParams& p) {
  double h = p.levels[i] * (1.0 - (1.0 + p.sigma) * detection_at_best);
  for (size_t j = 0; j < phi.size(); ++j) {
    if (static_cast<int>(j) == i) continue;
    h += switching_gain(phi[j] - phi[i], p.Q);
  }
  return h;
}

// H(l_i, phi, x) = l_i - l_i (1+sigma) P(alpha*(x)) + sum_{j != i} psi(phi_j - phi_i).
inline double hamiltonian(int i, const ValueVec& phi, const SimplexVec& x, const ModelParams& p) {
  const double pa = detection_prob(inspector_best_response(x, p), p);
  return hamiltonian_with_detection(i, phi, pa, p);
}

// Running payoff of an inspectee at level i holding the rate row q_row:
// l_i - l_i (1+sigma) P(alpha*(x)) - sum_{j != i} q_ij^2.
inline double running_payoff(int i, const SimplexVec& x, std::span<const double> q_row,
                             const ModelParams& p) {
  const double pa = detection_prob(inspector_best_response(x, p), p);
  double cost = 0.0;
  for (size_t j = 0; j < q_row.size(); ++j) {
    if (static_cast<int>(j) == i) continue;
    cost += q_row[j] * q_row[j];
  }
  return p.levels[i] * (1.0 - (1.0 + p.sigma) * pa) - cost;
}

inline double terminal_payoff(int i, const SimplexVec& x, const ModelParams& p) {
  switch (p.terminal.family) {
    case TerminalFamily::Zero:
      return 0.0;
    case TerminalFamily::Linear:
      return p.terminal.a * p.levels[i] + p.terminal.b * crime_exposure(x, p);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Mollified rates.
//
// The clamped optimal rate depends on the state only through the scalar value
// difference z = phi_j - phi_i, so smoothing acts on the one-dimensional
// profile g(z) = clamp(z/2, 0, Q). Convolving with the triweight kernel
// rho(t) = (35/32)(1-t^2)^3 on [-1,1], scaled to width eta, has a closed
// form because g = (ramp(z) - ramp(z - 2Q))/2 and ramp*rho_eta is polynomial
// inside the kernel support. The result is C^2 (indeed C^3), coincides with
// the clamp at distance > eta from the kinks {0, 2Q}, maps into [0, Q], and
// stays within eta/2 of the clamp everywhere.

namespace detail {

// CDF of the triweight kernel.
inline double triweight_cdf(double s) {
  return 0.5 + (35.0 / 32.0) * (s - s * s * s + 0.6 * std::pow(s, 5) - std::pow(s, 7) / 7.0);
}

// First moment integral int_{-1}^{s} t rho(t) dt.
inline double triweight_partial_mean(double s) {
  const double s2 = s * s, s4 = s2 * s2, s6 = s4 * s2, s8 = s4 * s4;
  return (35.0 / 32.0) * (0.5 * s2 - 0.75 * s4 + 0.5 * s6 - 0.125 * s8 - 0.125);
}

// ramp(z) convolved with the width-eta triweight kernel.
inline double mollified_ramp(double z, double eta) {
  if (z <= -eta) return 0.0;
  if (z >= eta) return z;
  const double s = z / eta;
  return z * triweight_cdf(s) - eta * triweight_partial_mean(s);
}

}  // namespace detail

inline double mollify_rates(double z, double eta, const ModelParams& p) {
  if (!(eta > 0.0)) throw std::domain_error("mollify_rates: eta must be > 0");
  return 0.5 * (detail::mollified_ramp(z, eta) - detail::mollified_ramp(z - 2.0 * p.Q, eta));
}

inline void mollified_rates_row(const ValueVec& phi, int i, double eta, const ModelParams& p,
                                std::span<double> row) {
  const int d = static_cast<int>(phi.size());
  double off = 0.0;
  for (int j = 0; j < d; ++j) {
    if (j == i) continue;
    row[static_cast<size_t>(j)] = mollify_rates(phi[j] - phi[i], eta, p);
    off += row[static_cast<size_t>(j)];
  }
  row[static_cast<size_t>(i)] = -off;
}

}  // namespace mfgi
