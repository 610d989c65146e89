#pragma once

#include <cmath>
#include <stdexcept>

namespace mfgi {

// Uniform grid on [0, T] with K steps (K+1 nodes).
struct TimeGrid {
  int K = 200;
  double T = 1.0;

  TimeGrid() = default;
  TimeGrid(int steps, double horizon) : K(steps), T(horizon) {
    if (K < 2) throw std::invalid_argument("TimeGrid: K must be >= 2");
    if (!(T > 0.0)) throw std::invalid_argument("TimeGrid: T must be > 0");
  }

  double dt() const { return T / K; }
  double node(int k) const { return T * static_cast<double>(k) / K; }
};

}  // namespace mfgi
