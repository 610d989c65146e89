#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

namespace mfgi {

struct MeanCI {
  double mean = 0.0;
  double half_width = 0.0;  // 95% normal CI
};

inline MeanCI mean_halfwidth(std::span<const double> xs) {
  const size_t n = xs.size();
  if (n == 0) return {};
  bool all_equal = true;
  for (double x : xs)
    if (x != xs.front()) {
      all_equal = false;
      break;
    }
  if (all_equal) return {xs.front(), 0.0};  // exact for degenerate samples
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  if (n < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(n))};
}

// Runs fn(rep) for rep in [0, R) over `threads` workers with a static stride
// partition. Each replication writes only to its own pre-assigned slot, so
// results do not depend on scheduling.
inline void run_replications(int64_t R, int threads, const std::function<void(int64_t)>& fn) {
  if (threads < 1) threads = 1;
  if (threads == 1 || R < 2) {
    for (int64_t r = 0; r < R; ++r) fn(r);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (int64_t r = t; r < R; r += threads) fn(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_half_width = 0.0;  // 95% normal CI on the slope
  int points = 0;
};

// Ordinary least squares of log(y) against log(x).
inline LineFit fit_loglog(std::span<const double> xs, std::span<const double> ys) {
  const size_t n = xs.size();
  if (n < 2 || ys.size() != n) throw std::invalid_argument("fit_loglog: need >= 2 points");
  std::vector<double> lx(n), ly(n);
  for (size_t i = 0; i < n; ++i) {
    if (!(xs[i] > 0.0 && ys[i] > 0.0))
      throw std::invalid_argument("fit_loglog: inputs must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  LineFit fit;
  fit.points = static_cast<int>(n);
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (n > 2) {
    double ss_res = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
      ss_res += r * r;
    }
    const double se = std::sqrt(ss_res / static_cast<double>(n - 2) / sxx);
    fit.slope_half_width = 1.96 * se;
  }
  return fit;
}

}  // namespace mfgi
