#include <doctest.h>

#include <cmath>

#include "pwer/error.hpp"
#include "pwer/umbrella.hpp"

using namespace pwer;

TEST_CASE("config validation") {
  UmbrellaConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.df() == doctest::Approx(1052.0));
  c.l = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.l = 9;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = UmbrellaConfig{};
  c.l = 4;
  c.q = 0.3;  // 1.2 zero strata
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.q = 0.75;
  c.tau = 0.2;  // one positive effect cannot be spread
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = UmbrellaConfig{};
  c.pi = {0.5, 0.6};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.pi = {0.9995, 0.0005};
  CHECK_THROWS_AS(c.validate(), ValidationError);  // second stratum rounds to zero patients
  c = UmbrellaConfig{};
  c.n_total = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  UmbrellaConfig odd;
  odd.l = 3;
  odd.n_total = 100;
  const auto sizes = odd.stratum_sizes();
  for (int n : sizes) CHECK(n % 2 == 0);
  CHECK(odd.df() == doctest::Approx(sizes[0] + sizes[1] + sizes[2] - 6));
}

TEST_CASE("config json round trip") {
  UmbrellaConfig c;
  c.l = 3;
  c.q = 1.0 / 3.0;
  c.theta_overall = 0.2;
  c.tau = 0.5;
  const auto back = umbrella_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(back.l == 3);
  CHECK(back.q == doctest::Approx(c.q));
  CHECK(back.tau == doctest::Approx(0.5));
  CHECK_THROWS_AS(umbrella_config_from_json(nlohmann::json::parse("[1]")), ValidationError);
  CHECK_THROWS_AS(umbrella_config_from_json(nlohmann::json::parse(R"({"l": "two"})")), ValidationError);
}

TEST_CASE("effect grid") {
  CHECK(theta_grid(4, 0.5, 0.0, 0.3) == std::vector<double>{0.0, 0.0, 0.3, 0.3});
  const auto g = theta_grid(4, 0.25, 0.5, 0.2);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(0.1));
  CHECK(g[2] == doctest::Approx(0.2));
  CHECK(g[3] == doctest::Approx(0.3));
  // theta_overall is the average positive effect; tau the relative half-range.
  CHECK((g[1] + g[2] + g[3]) / 3.0 == doctest::Approx(0.2));
  CHECK((g[3] - g[1]) / (g[3] + g[1]) == doctest::Approx(0.5));
  CHECK(theta_grid(2, 1.0, 0.0, 0.4) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(theta_grid(2, 0.5, 0.3, 1.0), ValidationError);
}

TEST_CASE("subset effects and correlations") {
  const std::vector<double> pi{0.2, 0.3, 0.5};
  const std::vector<double> theta{0.0, 1.0, 2.0};
  CHECK(subset_effect(theta, pi, 0b110) == doctest::Approx((0.3 + 1.0) / 0.8));
  CHECK(subset_effect(theta, pi, 0b001) == 0.0);
  CHECK_THROWS_AS(subset_effect(theta, pi, 0), ValidationError);
  CHECK_THROWS_AS(subset_effect(theta, pi, 0b1000), ValidationError);
  CHECK(subset_corr(pi, 0b011, 0b110) == doctest::Approx(0.3 / std::sqrt(0.5 * 0.8)));
  CHECK(subset_corr(pi, 0b001, 0b010) == 0.0);
  const auto r = subset_correlation_matrix(pi);
  CHECK(r.dim() == 7);
  for (Subset s = 1; s <= 7; ++s) {
    for (Subset t = 1; t <= 7; ++t) {
      CHECK(r(static_cast<int>(s - 1), static_cast<int>(t - 1)) ==
            doctest::Approx(subset_corr(pi, s, t)).epsilon(1e-12));
    }
  }
}

TEST_CASE("simulated statistics have the stated null correlation") {
  UmbrellaConfig c;
  c.l = 3;
  c.pi = {0.2, 0.3, 0.5};
  c.n_total = 600;
  const std::vector<double> theta(3, 0.0);
  const int reps = 40'000;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(7, 7);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(7);
  for (int k = 0; k < reps; ++k) {
    const auto t = simulate_t_stats(c, theta, static_cast<std::uint64_t>(k) + 1);
    const Eigen::Map<const Eigen::VectorXd> v(t.data(), 7);
    sum += v * v.transpose();
    mean += v;
  }
  mean /= reps;
  const Eigen::MatrixXd cov = sum / reps - mean * mean.transpose();
  const auto r = subset_correlation_matrix(c.pi);
  for (int i = 0; i < 7; ++i) {
    CHECK(std::abs(mean(i)) < 0.03);
    for (int j = 0; j < 7; ++j) {
      const double corr = cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
      CHECK(std::abs(corr - r(i, j)) < 0.02);
    }
  }
}

TEST_CASE("selection rule") {
  const std::vector<double> t{1.0, 2.5, 2.5};
  CHECK(select_subset(t, 2.0) == 2u);
  CHECK(select_subset(t, 2.5) == 0u);
  CHECK(select_subset(std::vector<double>{}, 0.0) == 0u);
  const auto out = evaluate_trial(t, 2.0);
  CHECK(out.rejected == std::vector<Subset>{2, 3});
  CHECK(control_from_string("fwer") == Control::fwer);
  CHECK_THROWS_AS(control_from_string("fdr"), ValidationError);
}

TEST_CASE("critical values") {
  UmbrellaConfig one;
  one.l = 1;
  const auto c1 = umbrella_criticals(one);
  CHECK(c1.c_pwer == doctest::Approx(t_quantile(0.975, one.df())));
  CHECK(c1.c_fwer == c1.c_pwer);

  // l = 2: compare with the multivariate t probabilities of (T1, T2, T12).
  UmbrellaConfig two;
  CriticalOptions opts;
  opts.draws = 400'000;
  opts.seed = 4;
  const auto c = umbrella_criticals(two, opts);
  CHECK(c.c_pwer < c.c_fwer);
  const auto r = subset_correlation_matrix(two.prevalences());
  const double df = two.df();
  const double all[] = {c.c_fwer, c.c_fwer, c.c_fwer};
  const ProbEstimate fwer = mv_cdf(all, r, df);
  CHECK(std::abs(1.0 - fwer.value - 0.025) < c.fwer_abs_error + fwer.abs_error);
  // Stratum 1 is affected by T1 and T12.
  const int idx[] = {0, 2};
  const double pair[] = {c.c_pwer, c.c_pwer};
  const ProbEstimate inside = mv_cdf(pair, r.submatrix(idx), df);
  CHECK(std::abs(1.0 - inside.value - 0.025) < c.pwer_abs_error + inside.abs_error);

  opts.threads = 3;
  const auto again = umbrella_criticals(two, opts);
  CHECK(again.c_pwer == c.c_pwer);
  CHECK(again.c_fwer == c.c_fwer);
}

TEST_CASE("paired simulation") {
  UmbrellaConfig c;
  c.q = 0.0;
  c.theta_overall = 0.15;
  CriticalOptions opts;
  opts.draws = 200'000;
  opts.seed = 9;
  const auto crit = umbrella_criticals(c, opts);
  const auto rep = simulate_pair(c, crit, 20'000, 5, 2);
  CHECK(rep.dominance_violations == 0);
  CHECK(rep.pwer.power.estimate >= rep.fwer.power.estimate);
  // No zero effects: nothing false, correct = selected.
  CHECK(rep.pwer.false_fraction.estimate == 0.0);
  CHECK(rep.pwer.correct.estimate == doctest::Approx(rep.pwer.any_selected.estimate));
  CHECK(rep.pwer.realized_fwer.estimate == 0.0);
  CHECK(rep.pwer.rae.estimate > 0.0);

  const auto rep1 = simulate_pair(c, crit, 20'000, 5, 1);
  CHECK(rep1.pwer.power.estimate == rep.pwer.power.estimate);
  CHECK(rep1.fwer.rae.estimate == rep.fwer.rae.estimate);

  UmbrellaConfig null;
  const auto nrep = simulate_pair(null, umbrella_criticals(null, opts), 20'000, 6, 1);
  CHECK(nrep.pwer.power.estimate == 0.0);
  CHECK(nrep.pwer.rae.estimate == 0.0);
  CHECK(nrep.pwer.false_fraction.estimate == doctest::Approx(nrep.pwer.any_selected.estimate));
  CHECK(nrep.pwer.realized_pwer.estimate <= nrep.pwer.realized_fwer.estimate);

  const auto j = to_json(rep.pwer);
  CHECK(j.at("control") == "pwer");
  CHECK(j.at("power").size() == 2);
  CHECK_THROWS_AS(simulate_pair(c, crit, 0, 1), ValidationError);
}
