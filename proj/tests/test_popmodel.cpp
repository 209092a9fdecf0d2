#include <doctest.h>

#include <random>

#include "pwer/error.hpp"
#include "pwer/popmodel.hpp"

using namespace pwer;

TEST_CASE("subset helpers") {
  CHECK(subset_of({1, 3}) == 0b101u);
  CHECK(indices_of(0b1101u) == std::vector<int>{1, 3, 4});
  CHECK(zero_based(0b1101u) == std::vector<int>{0, 2, 3});
  CHECK(format_subset(subset_of({2, 1})) == "{1,2}");
  CHECK_THROWS_AS(subset_of({0}), ValidationError);
  CHECK_THROWS_AS(subset_of({kMaxHypotheses + 1}), ValidationError);
}

TEST_CASE("structure validation") {
  CHECK_THROWS_AS(PopulationStructure::make({}), ValidationError);
  CHECK_THROWS_AS(PopulationStructure::make({{subset_of({1}), 0.5}, {subset_of({2}), 0.4}}),
                  ValidationError);
  CHECK_THROWS_AS(PopulationStructure::make({{subset_of({1}), 1.2}, {subset_of({2}), -0.2}}),
                  ValidationError);
  CHECK_THROWS_AS(PopulationStructure::make({{subset_of({1}), 0.5}, {subset_of({1}), 0.5}}),
                  ValidationError);
  // hypothesis 2 is not covered
  CHECK_THROWS_AS(PopulationStructure::make({{subset_of({1}), 1.0}}, 2), ValidationError);
  CHECK_THROWS_AS(PopulationStructure::make({{subset_of({1, 3}), 1.0}}, 2), ValidationError);
}

TEST_CASE("canonical form") {
  const auto s = PopulationStructure::make(
      {{subset_of({1, 2}), 0.2}, {subset_of({2}), 0.4}, {subset_of({1}), 0.3}, {subset_of({3}), 0.1},
       {subset_of({3, 2}), 0.0}},
      3);
  CHECK(s.m() == 3);
  REQUIRE(s.strata().size() == 4);
  CHECK(s.strata()[0].subset == subset_of({1}));
  CHECK(s.strata()[2].subset == subset_of({1, 2}));
  CHECK(s.strata()[3].subset == subset_of({3}));
  CHECK(s.population_prevalence(1) == doctest::Approx(0.5));
  CHECK(s.population_prevalence(3) == doctest::Approx(0.1));
  CHECK_THROWS_AS(PopulationStructure::make({{subset_of({1}), 1.0}, {subset_of({2}), 0.0}}),
                  ValidationError);
  CHECK(s.strata_containing(2) == std::vector<Subset>{subset_of({2}), subset_of({1, 2})});
  CHECK(s.hypotheses_affecting(subset_of({1, 5})) == subset_of({1}));
}

TEST_CASE("nested populations") {
  const double p[] = {1.0, 0.6, 0.25};
  const auto s = PopulationStructure::nested(p);
  REQUIRE(s.strata().size() == 3);
  CHECK(s.strata()[0].subset == subset_of({1}));
  CHECK(s.strata()[0].prevalence == doctest::Approx(0.4));
  CHECK(s.strata()[1].prevalence == doctest::Approx(0.35));
  CHECK(s.strata()[2].subset == subset_of({1, 2, 3}));
  CHECK(s.strata()[2].prevalence == doctest::Approx(0.25));
  const double bad[] = {1.0, 0.7, 0.8};
  CHECK_THROWS_AS(PopulationStructure::nested(bad), ValidationError);
}

TEST_CASE("json round trip for random structures") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const int m = 1 + static_cast<int>(rng() % 5);
    std::vector<Stratum> strata;
    double total = 0.0;
    for (Subset s = 1; s < (1u << m); ++s) {
      if (rng() % 3 == 0 && s != (1u << m) - 1) continue;
      const double p = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
      strata.push_back({s, p});
      total += p;
    }
    for (auto& st : strata) st.prevalence /= total;
    const auto s = PopulationStructure::make(strata, m);
    const auto back = structure_from_json(nlohmann::json::parse(to_json(s).dump()));
    CHECK(back.m() == s.m());
    REQUIRE(back.strata().size() == s.strata().size());
    for (std::size_t k = 0; k < s.strata().size(); ++k) {
      CHECK(back.strata()[k].subset == s.strata()[k].subset);
      CHECK(back.strata()[k].prevalence == doctest::Approx(s.strata()[k].prevalence).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(structure_from_json(nlohmann::json::parse(R"({"strata": 3})")), ValidationError);
  CHECK_THROWS_AS(structure_from_json(nlohmann::json::parse(R"({"strata": [{"subset": [1]}]})")),
                  ValidationError);
}

TEST_CASE("prevalence estimates") {
  const std::vector<StratumCount> counts{{subset_of({1}), 20}, {subset_of({2}), 20},
                                         {subset_of({1, 2}), 10}};
  const auto est = prevalence_mle(counts);
  CHECK(est.total_n == 50);
  CHECK(est.estimates[2].prevalence == doctest::Approx(0.2));
  CHECK_FALSE(est.floor_applied);

  const std::vector<StratumCount> zero{{subset_of({1}), 50}, {subset_of({1, 2}), 0}};
  const auto floored = prevalence_mle(zero, 0.05);
  CHECK(floored.floor_applied);
  CHECK(floored.estimates[0].prevalence == doctest::Approx(0.95));
  CHECK(floored.estimates[1].prevalence == doctest::Approx(0.05));

  // Rescaling can push a second stratum under the floor.
  const std::vector<StratumCount> chain{{subset_of({1}), 96}, {subset_of({2}), 4},
                                        {subset_of({1, 2}), 0}};
  const auto c = prevalence_mle(chain, 0.05);
  CHECK(c.estimates[1].prevalence == doctest::Approx(0.05));
  CHECK(c.estimates[2].prevalence == doctest::Approx(0.05));
  CHECK(c.estimates[0].prevalence == doctest::Approx(0.9));

  const std::vector<StratumCount> none{{subset_of({1}), 0}};
  CHECK_THROWS_AS(prevalence_mle(none), ValidationError);
  CHECK_THROWS_AS(prevalence_mle(counts, 0.4), ValidationError);
}
