#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mfgi/model.hpp"
#include "mfgi/rng.hpp"

using namespace mfgi;

namespace {

ModelParams defaults() { return ModelParams{}; }

ModelParams unit_detection() {
  ModelParams p;
  p.detection.p_max = 1.0;
  p.detection.lambda = 1.0;
  return p;
}

SimplexVec random_simplex(Rng& rng, int d) {
  SimplexVec x(static_cast<size_t>(d));
  double sum = 0.0;
  for (auto& xi : x) {
    xi = -std::log(1.0 - rng.uniform01());
    sum += xi;
  }
  for (auto& xi : x) xi /= sum;
  return x;
}

}  // namespace

TEST_CASE("detection probability closed forms") {
  ModelParams p = unit_detection();
  CHECK(detection_prob(0.0, p) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(detection_prob(std::log(2.0), p) == doctest::Approx(0.5).epsilon(1e-12));

  DetectionSpec saturating{DetectionFamily::Exponential, 0.8, 1.0};
  CHECK(detection_prob(50.0, saturating, 50.0) == doctest::Approx(0.8).epsilon(1e-12));

  CHECK_THROWS_AS(detection_prob(-0.1, p), std::domain_error);
  CHECK_THROWS_AS(detection_prob(p.F + 0.1, p), std::domain_error);
}

TEST_CASE("detection family is increasing and strictly concave") {
  ModelParams p = defaults();
  const double h = 1e-4;
  for (int k = 1; k <= 100; ++k) {
    const double a = p.F * k / 101.0;
    const double up = detection_prob(a + h, p), down = detection_prob(a - h, p);
    const double mid = detection_prob(a, p);
    CHECK((up - down) / (2.0 * h) > 0.0);
    CHECK((up - 2.0 * mid + down) / (h * h) < 0.0);
  }
}

TEST_CASE("inspector best response closed forms") {
  ModelParams p = unit_detection();
  p.F = 10.0;

  SUBCASE("zero exposure yields zero budget") {
    SimplexVec x{1.0, 0.0, 0.0};  // all mass at level 0
    CHECK(inspector_best_response(x, p) == 0.0);
  }
  SUBCASE("interior optimum") {
    SimplexVec x{0.0, 1.0, 0.0};  // S = 1
    CHECK(inspector_best_response(x, p) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("small exposure pins the budget at zero") {
    SimplexVec x{0.6, 0.4, 0.0};  // S = 0.4, marginal value below 1 everywhere
    CHECK(inspector_best_response(x, p) == 0.0);
  }
}

TEST_CASE("inspector payoff formula and maximiser") {
  ModelParams p = defaults();
  Rng rng(0xC0FFEEull, 1);

  SUBCASE("zero budget") {
    SimplexVec x{0.2, 0.5, 0.3};
    CHECK(inspector_payoff(0.0, x, p) ==
          doctest::Approx(-p.L * crime_exposure(x, p)).epsilon(1e-15));
  }
  SUBCASE("zero exposure") {
    SimplexVec x{1.0, 0.0, 0.0};
    CHECK(inspector_payoff(1.7, x, p) == doctest::Approx(-1.7).epsilon(1e-15));
  }
  SUBCASE("domain") {
    SimplexVec x{0.2, 0.5, 0.3};
    CHECK_THROWS_AS(inspector_payoff(-1.0, x, p), std::domain_error);
    CHECK_THROWS_AS(inspector_payoff(p.F + 1.0, x, p), std::domain_error);
  }
  SUBCASE("best response beats a fine budget grid") {
    for (int trial = 0; trial < 50; ++trial) {
      const SimplexVec x = random_simplex(rng, p.d());
      const double star = inspector_payoff(inspector_best_response(x, p), x, p);
      for (int k = 0; k <= 1000; ++k) {
        const double a = p.F * k / 1000.0;
        CHECK(star - inspector_payoff(a, x, p) >= -1e-9);
      }
    }
  }
}

TEST_CASE("optimal switching rates: clamp branches") {
  ModelParams p;
  p.levels = {0.0, 1.0};
  RateMatrix m(2);

  m = optimal_rates(ValueVec{0.0, 3.0}, p);
  CHECK(m(0, 1) == 1.0);  // difference above 2Q saturates at Q

  m = optimal_rates(ValueVec{5.0, 1.0}, p);
  CHECK(m(0, 1) == 0.0);  // negative difference switches off

  m = optimal_rates(ValueVec{0.0, 1.0}, p);
  CHECK(m(0, 1) == 0.5);  // interior branch: half the difference
  CHECK(m(0, 0) == -0.5);
}

TEST_CASE("optimal rates always form a valid rate matrix") {
  ModelParams p = defaults();
  Rng rng(0xC0FFEEull, 2);
  for (int trial = 0; trial < 500; ++trial) {
    ValueVec phi(3);
    for (auto& v : phi) v = 8.0 * (rng.uniform01() - 0.5);
    const RateMatrix m = optimal_rates(phi, p);
    CHECK(m.validation_errors(p.Q).empty());
  }
}

TEST_CASE("hamiltonian closed forms") {
  SUBCASE("equal values leave only the crime term") {
    ModelParams p = unit_detection();
    SimplexVec x{0.0, 1.0, 0.0};  // S = 1 so P(alpha*) = 0.5
    ValueVec phi{2.0, 2.0, 2.0};
    CHECK(hamiltonian(1, phi, x, p) == doctest::Approx(0.0).epsilon(1e-12));
    const double pa = detection_prob(inspector_best_response(x, p), p);
    CHECK(hamiltonian(2, phi, x, p) ==
          doctest::Approx(p.levels[2] * (1.0 - (1.0 + p.sigma) * pa)).epsilon(1e-12));
  }
  SUBCASE("pure switching gain") {
    ModelParams p;
    p.levels = {0.0, 1.0};
    SimplexVec x{1.0, 0.0};  // zero exposure, so the level-0 crime term vanishes
    CHECK(hamiltonian(0, ValueVec{0.0, 1.0}, x, p) == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("envelope identity: value gradient of H matches the optimal rates") {
  ModelParams p = defaults();
  Rng rng(0xC0FFEEull, 3);
  const SimplexVec x{0.2, 0.5, 0.3};
  const double h = 1e-5;
  const double pa = detection_prob(inspector_best_response(x, p), p);

  int accepted = 0;
  while (accepted < 1000) {
    ValueVec phi(3);
    for (auto& v : phi) v = 7.0 * (rng.uniform01() - 0.5);
    bool away_from_kinks = true;
    for (int i = 0; i < 3 && away_from_kinks; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        const double z = phi[static_cast<size_t>(j)] - phi[static_cast<size_t>(i)];
        if (std::abs(z) < 1e-4 || std::abs(z - 2.0 * p.Q) < 1e-4) away_from_kinks = false;
      }
    if (!away_from_kinks) continue;
    ++accepted;

    const int i = static_cast<int>(rng.next() % 3);
    const RateMatrix q = optimal_rates(phi, p);
    for (int j = 0; j < 3; ++j) {
      ValueVec up = phi, down = phi;
      up[static_cast<size_t>(j)] += h;
      down[static_cast<size_t>(j)] -= h;
      const double fd = (hamiltonian_with_detection(i, up, pa, p) -
                         hamiltonian_with_detection(i, down, pa, p)) /
                        (2.0 * h);
      CHECK(std::abs(fd - q(i, j)) <= 1e-6);
    }
  }
}

TEST_CASE("hamiltonian is Lipschitz in the value argument") {
  ModelParams p = defaults();
  const double bound = (p.d() - 1) * p.Q * std::sqrt(2.0) + 1.0;
  Rng rng(0xC0FFEEull, 4);
  const SimplexVec x{0.2, 0.5, 0.3};
  const double pa = detection_prob(inspector_best_response(x, p), p);
  for (int trial = 0; trial < 1000; ++trial) {
    ValueVec phi(3), psi(3);
    for (auto& v : phi) v = 6.0 * (rng.uniform01() - 0.5);
    for (auto& v : psi) v = 6.0 * (rng.uniform01() - 0.5);
    double dist = 0.0;
    for (int i = 0; i < 3; ++i)
      dist += (phi[static_cast<size_t>(i)] - psi[static_cast<size_t>(i)]) *
              (phi[static_cast<size_t>(i)] - psi[static_cast<size_t>(i)]);
    dist = std::sqrt(dist);
    if (dist < 1e-12) continue;
    for (int i = 0; i < 3; ++i) {
      const double gap = std::abs(hamiltonian_with_detection(i, phi, pa, p) -
                                  hamiltonian_with_detection(i, psi, pa, p));
      CHECK(gap / dist <= bound);
    }
  }
}

TEST_CASE("running payoff") {
  SUBCASE("no control cost, no detection") {
    ModelParams p = defaults();
    SimplexVec x{1.0, 0.0, 0.0};
    std::vector<double> row{0.0, 0.0, 0.0};
    CHECK(running_payoff(2, x, row, p) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("direct evaluation") {
    ModelParams p = unit_detection();
    p.levels = {0.0, 2.0};
    SimplexVec x{0.5, 0.5};  // S = 1 so P(alpha*) = 0.5
    std::vector<double> row{0.5, -0.5};
    CHECK(running_payoff(1, x, row, p) == doctest::Approx(-0.25).epsilon(1e-12));
  }
  SUBCASE("symmetric in the off-diagonal entries") {
    ModelParams p = defaults();
    SimplexVec x{0.2, 0.5, 0.3};
    std::vector<double> a{0.3, -0.8, 0.5}, b{0.5, -0.8, 0.3};
    CHECK(running_payoff(1, x, a, p) == running_payoff(1, x, b, p));
  }
}

TEST_CASE("terminal payoff families") {
  ModelParams p = defaults();
  SimplexVec x{0.2, 0.5, 0.3};
  CHECK(terminal_payoff(1, x, p) == 0.0);
  p.terminal = {TerminalFamily::Linear, 2.0, -1.0};
  CHECK(terminal_payoff(1, x, p) ==
        doctest::Approx(2.0 * p.levels[1] - crime_exposure(x, p)).epsilon(1e-15));
}

TEST_CASE("mollified rates") {
  ModelParams p = defaults();  // Q = 1

  SUBCASE("rejects non-positive widths") {
    CHECK_THROWS_AS(mollify_rates(0.3, 0.0, p), std::domain_error);
    CHECK_THROWS_AS(mollify_rates(0.3, -0.1, p), std::domain_error);
  }
  SUBCASE("affine mid-segment value is exact") {
    for (double eta : {0.9, 0.5, 0.1}) CHECK(mollify_rates(p.Q, eta, p) == 0.5 * p.Q);
  }
  SUBCASE("flat regions are exact") {
    for (double eta : {0.9, 0.5, 0.1}) {
      CHECK(mollify_rates(-10.0 * p.Q, eta, p) == 0.0);
      CHECK(mollify_rates(10.0 * p.Q, eta, p) == p.Q);
    }
  }
  SUBCASE("matches the clamp away from kinks, stays within eta/2 everywhere") {
    for (double eta : {0.5, 0.25, 0.1, 0.01}) {
      for (int k = -4000; k <= 8000; ++k) {
        const double z = k * 1e-3;
        const double clamp_value = optimal_rate(0.0, z, p.Q);
        const double smooth = mollify_rates(z, eta, p);
        CHECK(std::abs(smooth - clamp_value) <= 0.5 * eta + 1e-15);
        CHECK(smooth >= -1e-15);
        CHECK(smooth <= p.Q + 1e-15);
        const double kink_dist = std::min(std::abs(z), std::abs(z - 2.0 * p.Q));
        if (kink_dist > eta + 1e-9) CHECK(smooth == clamp_value);
      }
    }
  }
  SUBCASE("smoothing gap grows with the width") {
    for (int k = -300; k <= 500; ++k) {
      const double z = k * 1e-2;
      const double clamp_value = optimal_rate(0.0, z, p.Q);
      const double wide = std::abs(mollify_rates(z, 0.5, p) - clamp_value);
      const double narrow = std::abs(mollify_rates(z, 0.1, p) - clamp_value);
      CHECK(wide >= narrow - 1e-15);
    }
  }
}

TEST_CASE("model validation lists every violation at once") {
  ModelParams p;
  p.levels = {2.0, 1.0};
  p.Q = -1.0;
  p.T = 0.0;
  try {
    p.validate();
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.violations().size() == 3);
    bool mentions_levels = false;
    for (const auto& v : e.violations())
      if (v.find("levels") != std::string::npos) mentions_levels = true;
    CHECK(mentions_levels);
  }
}

TEST_CASE("simplex helpers") {
  SimplexVec x{0.5, 0.5000000001, -2e-11};
  CHECK(simplex_drift(x) > 0.0);
  snap_to_simplex(x);
  CHECK(simplex_ok(x, 1e-15));
  CHECK(x[2] == 0.0);
}
