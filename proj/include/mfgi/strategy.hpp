#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "mfgi/model.hpp"
#include "mfgi/time_grid.hpp"

namespace mfgi {

// A switching-strategy source: yields a valid RateMatrix for any (t, x).
// Implementations must be pure so concurrent callers can share one instance.
class StrategySource {
 public:
  virtual ~StrategySource() = default;

  virtual int dim() const = 0;

  // Fills `out` (already sized dim() x dim()) for time t and population state x.
  virtual void rates_into(double t, const SimplexVec& x, RateMatrix& out) const = 0;

  RateMatrix rates(double t, const SimplexVec& x) const {
    RateMatrix m(dim());
    rates_into(t, x, m);
    return m;
  }

  // Interior times in (a, b) where the policy is only piecewise smooth;
  // integrals of the policy split at these knots.
  virtual void append_knots(double /*a*/, double /*b*/, std::vector<double>& /*out*/) const {}
};

class ZeroStrategy final : public StrategySource {
 public:
  explicit ZeroStrategy(int d) : d_(d) {}
  int dim() const override { return d_; }
  void rates_into(double, const SimplexVec&, RateMatrix& out) const override {
    out = RateMatrix(d_);
  }

 private:
  int d_;
};

class ConstantStrategy final : public StrategySource {
 public:
  explicit ConstantStrategy(RateMatrix m) : m_(std::move(m)) {}
  int dim() const override { return m_.dim(); }
  void rates_into(double, const SimplexVec&, RateMatrix& out) const override { out = m_; }
  const RateMatrix& matrix() const { return m_; }

 private:
  RateMatrix m_;
};

// Rate matrices given at grid nodes, interpolated linearly in time and
// independent of the realized population state. Convex combinations preserve
// the row constraints, so every interpolated matrix is valid.
class GridStrategy final : public StrategySource {
 public:
  GridStrategy(TimeGrid grid, std::vector<RateMatrix> nodes)
      : grid_(grid), nodes_(std::move(nodes)) {
    if (static_cast<int>(nodes_.size()) != grid_.K + 1)
      throw std::invalid_argument("GridStrategy: need K+1 node matrices");
  }

  int dim() const override { return nodes_.front().dim(); }

  void rates_into(double t, const SimplexVec&, RateMatrix& out) const override {
    const double s = std::clamp(t, 0.0, grid_.T) / grid_.dt();
    int k = std::min(static_cast<int>(s), grid_.K - 1);
    const double w = s - k;
    const RateMatrix& a = nodes_[static_cast<size_t>(k)];
    const RateMatrix& b = nodes_[static_cast<size_t>(k) + 1];
    const int d = a.dim();
    if (out.dim() != d) out = RateMatrix(d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out(i, j) = (1.0 - w) * a(i, j) + w * b(i, j);
  }

  void append_knots(double a, double b, std::vector<double>& out) const override {
    const double dt = grid_.dt();
    int k = static_cast<int>(std::ceil(a / dt));
    for (; k <= grid_.K; ++k) {
      const double t = grid_.node(k);
      if (t >= b) break;
      if (t > a) out.push_back(t);
    }
  }

  const std::vector<RateMatrix>& nodes() const { return nodes_; }
  const TimeGrid& grid() const { return grid_; }

 private:
  TimeGrid grid_;
  std::vector<RateMatrix> nodes_;
};

// ---------------------------------------------------------------------------
// Builders

// q* nodes from a value path: the clamped Hamiltonian maximiser at each node.
inline GridStrategy make_optimal_policy(const std::vector<ValueVec>& value_path,
                                        const TimeGrid& grid, const ModelParams& p) {
  std::vector<RateMatrix> nodes;
  nodes.reserve(value_path.size());
  for (const auto& phi : value_path) nodes.push_back(optimal_rates(phi, p));
  return GridStrategy(grid, std::move(nodes));
}

// Smoothed q* nodes: the width-eta mollification of the clamp profile applied
// to the same value differences.
inline GridStrategy make_mollified_policy(const std::vector<ValueVec>& value_path,
                                          const TimeGrid& grid, const ModelParams& p,
                                          double eta) {
  std::vector<RateMatrix> nodes;
  nodes.reserve(value_path.size());
  std::vector<double> row(static_cast<size_t>(p.d()));
  for (const auto& phi : value_path) {
    RateMatrix m(p.d());
    for (int i = 0; i < p.d(); ++i) {
      mollified_rates_row(phi, i, eta, p, row);
      for (int j = 0; j < p.d(); ++j) m(i, j) = row[static_cast<size_t>(j)];
    }
    nodes.push_back(std::move(m));
  }
  return GridStrategy(grid, std::move(nodes));
}

inline ConstantStrategy make_stay(int d) { return ConstantStrategy(RateMatrix(d)); }

// Rate Q toward the top level from everywhere below it.
inline ConstantStrategy make_max_up(const ModelParams& p) {
  RateMatrix m(p.d());
  for (int i = 0; i + 1 < p.d(); ++i) m(i, p.d() - 1) = p.Q;
  m.finalize_diagonal();
  return ConstantStrategy(std::move(m));
}

// Rate Q toward the bottom level from everywhere above it.
inline ConstantStrategy make_max_down(const ModelParams& p) {
  RateMatrix m(p.d());
  for (int i = 1; i < p.d(); ++i) m(i, 0) = p.Q;
  m.finalize_diagonal();
  return ConstantStrategy(std::move(m));
}

// All off-diagonal rates equal to c.
inline ConstantStrategy make_uniform_constant(const ModelParams& p, double c) {
  if (c < 0.0 || c > p.Q)
    throw std::invalid_argument("constant strategy rate outside [0, Q]");
  RateMatrix m(p.d());
  for (int i = 0; i < p.d(); ++i)
    for (int j = 0; j < p.d(); ++j)
      if (i != j) m(i, j) = c;
  m.finalize_diagonal();
  return ConstantStrategy(std::move(m));
}

}  // namespace mfgi
