#include <doctest.h>

#include <cmath>
#include <sstream>

#include "pwer/error.hpp"
#include "pwer/prevsim.hpp"

using namespace pwer;

TEST_CASE("estimated critical value matches the general solver") {
  const TwoPopCounts counts{18, 25, 7};
  for (auto kind : {TwoPopKind::different_treatments, TwoPopKind::same_treatment}) {
    const auto est = estimated_critical(counts, kind, 0.025);
    CHECK(est.rho == doctest::Approx(two_pop_correlation(kind, 0.36, 0.5, 0.14)));
    const PwerProblem p(two_pop_structure(0.36, 0.5, 0.14),
                        {CorrelationMatrix::pair(est.rho), kInfiniteDf});
    CHECK(est.c_hat == doctest::Approx(solve_critical(p, 0.025).c_star).epsilon(1e-8));
  }
}

TEST_CASE("no overlap gives exactly alpha") {
  const TwoPopPrevalences truth{0.3, 0.7, 0.0};
  for (const TwoPopCounts counts : {TwoPopCounts{10, 40, 0}, TwoPopCounts{33, 17, 0},
                                    TwoPopCounts{1, 49, 0}}) {
    CHECK(actual_pwer_one_rep(counts, truth, TwoPopKind::different_treatments, 0.025) ==
          doctest::Approx(0.025).epsilon(1e-9));
  }
  // Population 2 drew nobody and goes untested.
  CHECK(actual_pwer_one_rep({50, 0, 0}, truth, TwoPopKind::different_treatments, 0.025) ==
        doctest::Approx(0.3 * 0.025).epsilon(1e-9));
}

TEST_CASE("consistency for counts proportional to the truth") {
  const TwoPopPrevalences truth{0.3, 0.5, 0.2};
  const TwoPopCounts counts{300'000, 500'000, 200'000};
  CHECK(actual_pwer_one_rep(counts, truth, TwoPopKind::same_treatment, 0.025) ==
        doctest::Approx(0.025).epsilon(1e-8));
}

TEST_CASE("true PWER decreases in the critical value") {
  const TwoPopPrevalences truth{0.25, 0.25, 0.5};
  double prev = 1.0;
  for (double c = 1.5; c < 3.5; c += 0.05) {
    const double v = true_pwer_at(c, 0.4, truth);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("missing overlap patients inflate the error") {
  const TwoPopPrevalences truth{0.45, 0.45, 0.1};
  const TwoPopCounts counts{25, 25, 0};
  const double raw = actual_pwer_one_rep(counts, truth, TwoPopKind::same_treatment, 0.025);
  CHECK(raw > 0.025);
  const double floored = actual_pwer_one_rep(counts, truth, TwoPopKind::same_treatment, 0.025, 0.05);
  CHECK(floored < raw);

  // A population without patients is not tested at all.
  const auto est = estimated_critical({0, 30, 0}, TwoPopKind::different_treatments, 0.025);
  CHECK_FALSE(est.testable1);
  CHECK(est.c_hat == doctest::Approx(norm_quantile(0.975)).epsilon(1e-8));
}

TEST_CASE("multinomial draws") {
  const TwoPopPrevalences truth{0.2, 0.3, 0.5};
  double mean_both = 0.0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto c = draw_counts(truth, 100, s);
    CHECK(c.total() == 100);
    mean_both += static_cast<double>(c.both);
  }
  CHECK(mean_both / 2000.0 == doctest::Approx(50.0).epsilon(0.02));
  CHECK(draw_counts(truth, 100, 9) == draw_counts(truth, 100, 9));
  CHECK(draw_counts({1.0, 0.0, 0.0}, 40, 1) == TwoPopCounts{40, 0, 0});
}

TEST_CASE("grid layout, csv and determinism") {
  PrevSimConfig c;
  c.n_total = 50;
  c.n_reps = 300;
  c.seed = 21;
  c.grid_steps = 4;
  c.threads = 1;
  const auto g = prevalence_effect_grid(c);
  CHECK(g.size() == 15);
  for (const auto& p : g) CHECK(p.pi1 + p.pi2 <= 1.0 + 1e-12);
  c.threads = 3;
  const auto g3 = prevalence_effect_grid(c);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k].mean_pwer == g3[k].mean_pwer);

  std::istringstream in(grid_csv(g));
  std::string line;
  std::getline(in, line);
  CHECK(line == "pi1,pi2,mean_pwer,mc_se");
  std::getline(in, line);
  CHECK(line.rfind("0.000000,0.000000,", 0) == 0);

  c.kind = TwoPopKind::independent_studies;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.kind = TwoPopKind::same_treatment;
  c.pi_min = 1.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  const auto j = nlohmann::json::parse(R"({"scenario": "ii", "N": 100, "n_reps": 20, "seed": 3})");
  const auto parsed = prevsim_config_from_json(j);
  CHECK(parsed.kind == TwoPopKind::same_treatment);
  CHECK(parsed.n_total == 100);
  CHECK_FALSE(parsed.pi_min.has_value());
}

TEST_CASE("larger samples get closer to alpha") {
  PrevSimConfig small;
  small.kind = TwoPopKind::same_treatment;
  small.n_reps = 2000;
  small.seed = 5;
  small.grid_steps = 5;
  small.n_total = 50;
  PrevSimConfig large = small;
  large.n_total = 1000;
  const auto a = prevalence_effect_grid(small);
  const auto b = prevalence_effect_grid(large);
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double slack = 2.0 * std::hypot(a[k].mc_se, b[k].mc_se);
    CHECK(std::abs(b[k].mean_pwer - 0.025) <= std::abs(a[k].mean_pwer - 0.025) + slack);
  }
}

TEST_CASE("the floor does not increase the error") {
  PrevSimConfig raw;
  raw.n_total = 50;
  raw.n_reps = 2000;
  raw.seed = 8;
  raw.grid_steps = 5;
  PrevSimConfig floored = raw;
  floored.pi_min = 0.02;
  const auto a = prevalence_effect_grid(raw);
  const auto b = prevalence_effect_grid(floored);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k].mean_pwer <= a[k].mean_pwer + 1e-12);
}
