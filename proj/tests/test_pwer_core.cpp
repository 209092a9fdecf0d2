#include <doctest.h>

#include <cmath>
#include <random>

#include "pwer/error.hpp"
#include "pwer/pwer_core.hpp"

using namespace pwer;

namespace {

PwerProblem overlap_pair(double pi12, double rho) {
  const double rest = (1.0 - pi12) / 2.0;
  return PwerProblem(PopulationStructure::make({{subset_of({1}), rest},
                                                {subset_of({2}), rest},
                                                {subset_of({1, 2}), pi12}},
                                               2),
                     {CorrelationMatrix::pair(rho), kInfiniteDf});
}

// Bisection on the explicit PWER of two independent statistics.
double independent_pair_by_bisection(double alpha, double pi12) {
  const auto f = [&](double c) {
    const double u = norm_cdf(c);
    return (1.0 - pi12) * (1.0 - u) + pi12 * (1.0 - u * u) - alpha;
  };
  double lo = 0.0;
  double hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("single population gives the unadjusted quantile") {
  const PwerProblem p(PopulationStructure::make({{subset_of({1}), 1.0}}), {CorrelationMatrix::identity(1)});
  const auto r = solve_critical(p, 0.025);
  CHECK(r.c_star == doctest::Approx(norm_quantile(0.975)).epsilon(1e-8));
  CHECK(r.backend == Backend::deterministic);
  CHECK(r.achieved_level <= 0.025);
}

TEST_CASE("independent pair: closed form, solver and bisection agree") {
  for (double pi12 : {0.001, 0.05, 0.3, 0.77, 1.0}) {
    const double oracle = independent_pair_by_bisection(0.025, pi12);
    CHECK(closed_form_independent_pair(0.025, pi12) == doctest::Approx(oracle).epsilon(1e-10));
    CHECK(solve_critical(overlap_pair(pi12, 0.0), 0.025).c_star == doctest::Approx(oracle).epsilon(1e-7));
  }
  CHECK(closed_form_independent_pair(0.025, 1.0) == doctest::Approx(norm_quantile(std::sqrt(0.975))));
  CHECK_THROWS_AS(closed_form_independent_pair(0.025, 0.0), ValidationError);
  CHECK_THROWS_AS(closed_form_independent_pair(1.5, 0.3), ValidationError);
}

TEST_CASE("FWER of independent statistics is the Sidak value") {
  const auto p = overlap_pair(0.3, 0.0);
  const auto r = solve_fwer_critical(p, 0.025);
  CHECK(r.c_star == doctest::Approx(norm_quantile(std::sqrt(0.975))).epsilon(1e-8));
}

TEST_CASE("PWER never exceeds FWER") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = overlap_pair(u(rng), 2.0 * u(rng) - 1.0);
    for (double c : {0.0, 1.0, 1.96, 2.5, 3.5}) CHECK(pwer_at(p, c) <= fwer_at(p, c) + 1e-15);
  }
}

TEST_CASE("weights scale the thresholds") {
  const double rest = 0.4;
  const PwerProblem p(PopulationStructure::make({{subset_of({1}), rest},
                                                 {subset_of({2}), rest},
                                                 {subset_of({1, 2}), 0.2}}),
                      {CorrelationMatrix::pair(0.3)}, std::nullopt, {1.0, 2.0});
  const auto r = solve_critical(p, 0.025);
  const auto t = p.thresholds(r.c_star);
  CHECK(t[1] == doctest::Approx(2.0 * t[0]));
  // Direct evaluation of the weighted PWER at the solution.
  const double direct = rest * norm_sf(t[0]) + rest * norm_sf(t[1]) +
                        0.2 * (1.0 - bvn_cdf(t[0], t[1], 0.3));
  CHECK(direct == doctest::Approx(0.025).epsilon(1e-6));
  CHECK_THROWS_AS(PwerProblem(p.structure(), p.corr(), std::nullopt, {1.0, -1.0}), ValidationError);
}

TEST_CASE("true nulls restrict the error strata") {
  const auto base = overlap_pair(0.2, 0.5);
  const PwerProblem only_first(base.structure(), base.corr(), subset_of({1}));
  // Only H1 can be falsely rejected: PWER = pi_1 P(Z1 > c).
  CHECK(pwer_at(only_first, 1.5) == doctest::Approx(0.6 * norm_sf(1.5)).epsilon(1e-12));
  CHECK(fwer_at(only_first, 1.5) == doctest::Approx(norm_sf(1.5)).epsilon(1e-12));
}

TEST_CASE("Monte Carlo backend agrees with quadrature") {
  const auto p = overlap_pair(0.35, 0.4);
  SolverOptions mc;
  mc.backend = Backend::monte_carlo;
  mc.mc_draws = 400'000;
  mc.seed = 17;
  const auto exact = solve_critical(p, 0.025);
  const auto approx = solve_critical(p, 0.025, mc);
  CHECK(approx.backend == Backend::monte_carlo);
  CHECK(approx.abs_error > 0.0);
  CHECK(std::abs(pwer_at(p, approx.c_star) - 0.025) <= approx.abs_error);
  CHECK(std::abs(approx.c_star - exact.c_star) < 0.02);
  mc.threads = 3;
  CHECK(solve_critical(p, 0.025, mc).c_star == approx.c_star);
}

TEST_CASE("three overlapping populations use the Monte Carlo route") {
  const auto s = PopulationStructure::make({{subset_of({1}), 0.3},
                                            {subset_of({2}), 0.2},
                                            {subset_of({3}), 0.2},
                                            {subset_of({1, 2, 3}), 0.3}});
  const PwerProblem p(s, {CorrelationMatrix::equicorrelated(3, 0.3)});
  CHECK_FALSE(p.deterministic());
  SolverOptions o;
  o.mc_draws = 300'000;
  o.seed = 3;
  const auto r = solve_critical(p, 0.025, o);
  CHECK(r.backend == Backend::monte_carlo);
  const ProbEstimate check = evaluate_pwer(p, p.thresholds(r.c_star));
  CHECK(std::abs(check.value - 0.025) <= 3.0 * (r.abs_error + check.abs_error));
  o.backend = Backend::deterministic;
  CHECK_THROWS_AS(solve_critical(p, 0.025, o), ValidationError);
}

TEST_CASE("solver errors") {
  const auto p = overlap_pair(0.2, 0.2);
  CHECK_THROWS_AS(solve_critical(p, 0.0), ValidationError);
  CHECK_THROWS_AS(solve_critical(p, 1.0), ValidationError);
  SolverOptions narrow;
  narrow.lower = 3.0;
  narrow.upper = 4.0;
  CHECK_THROWS_AS(solve_critical(p, 0.025, narrow), NumericalError);
}

TEST_CASE("adjusted p-values") {
  const auto p = overlap_pair(0.2, 0.214);
  const auto c = solve_critical(p, 0.025).c_star;
  const double inf = std::numeric_limits<double>::infinity();
  const double z[] = {c, inf};
  const auto adj = adjusted_p(p, z);
  CHECK(adj[0] == doctest::Approx(0.025).epsilon(1e-6));
  CHECK(adj[1] == 0.0);
  const double mid[] = {2.5, 1.0};
  const auto a2 = adjusted_p(p, mid);
  const double expected = 0.8 * norm_sf(2.5) + 0.2 * (1.0 - bvn_cdf(2.5, 2.5, 0.214));
  CHECK(a2[0] == doctest::Approx(expected).epsilon(1e-10));
  // Duality with the single-step test.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(1.5, 1.0);
  for (int k = 0; k < 200; ++k) {
    const double zz[] = {n(rng), n(rng)};
    const auto ap = adjusted_p(p, zz);
    for (int j = 0; j < 2; ++j) CHECK((ap[static_cast<std::size_t>(j)] <= 0.025) == (zz[j] >= c));
  }
  const double nan_z[] = {std::nan(""), 1.0};
  CHECK_THROWS_AS(adjusted_p(p, nan_z), ValidationError);
}

TEST_CASE("simultaneous bounds") {
  const double est[] = {1.0, 2.0};
  const double se[] = {0.5, 0.25};
  const auto lo = sci_bounds(est, se, 2.0, Side::lower);
  CHECK(lo.lower[0] == doctest::Approx(0.0));
  CHECK(lo.lower[1] == doctest::Approx(1.5));
  CHECK(std::isinf(lo.upper[0]));
  const auto two = sci_bounds(est, se, 2.0, Side::two_sided);
  CHECK(two.upper[1] == doctest::Approx(2.5));
  const double bad_se[] = {0.5, 0.0};
  CHECK_THROWS_AS(sci_bounds(est, bad_se, 2.0, Side::lower), ValidationError);
  CHECK(side_from_string("two-sided") == Side::two_sided);
  CHECK_THROWS_AS(side_from_string("left"), ValidationError);
}

TEST_CASE("coverage of the bounds matches 1 - PWER") {
  const auto p = overlap_pair(0.2, 0.214);
  const double c = solve_critical(p, 0.025).c_star;
  const auto cov = coverage_sim(p, c, Side::lower, 100'000, 12, 2);
  CHECK(cov.duality_violations == 0);
  CHECK(std::abs(cov.coverage - 0.975) < 4.0 * cov.standard_error);
  // Coverage under a smaller critical value drops to 1 - PWER(c).
  const auto loose = coverage_sim(p, 1.5, Side::lower, 100'000, 12, 1);
  CHECK(std::abs(loose.coverage - (1.0 - pwer_at(p, 1.5))) < 4.0 * loose.standard_error);
}
