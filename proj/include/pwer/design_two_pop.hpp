#pragma once

// Two overlapping populations of equal size: strata {1}, {2} with
// prevalence (1 - pi12) / 2 each and the intersection {1,2} with pi12.
//
//  - independent_studies: two separate trials, independent statistics.
//  - different_treatments: one trial, T1 and T2 against a shared control,
//    1:1 randomization in the complements and 1:1:1 in the intersection.
//  - same_treatment: one trial, the same treatment in both populations
//    with 1:1 randomization in every stratum.

#include <string_view>
#include <vector>

#include "pwer/pwer_core.hpp"

namespace pwer {

enum class TwoPopKind { independent_studies, different_treatments, same_treatment };

std::string_view to_string(TwoPopKind kind);
/// Accepts "indep", "i" / "different", "ii" / "same".
TwoPopKind two_pop_kind_from_string(std::string_view s);

struct TwoPopScenario {
  TwoPopKind kind = TwoPopKind::different_treatments;
  double pi12 = 0.0;
  double alpha = 0.025;
  double beta = 0.2;

  void validate() const;
  double pi_complement() const { return (1.0 - pi12) / 2.0; }
};

/// Corr(Z1, Z2) for general stratum prevalences pi_{1}, pi_{2}, pi_{12}.
/// Strata with zero prevalence contribute no patients.
double two_pop_correlation(TwoPopKind kind, double pi1_only, double pi2_only, double pi12);

/// Symmetric-case correlation: 0, (3/2) pi12 / (1 + 2 pi12), 2 pi12 / (1 + pi12).
double scenario_correlation(const TwoPopScenario& scenario);

/// v_i^2 with Var(x_T - x_C) = (2 sigma^2 / N) v_i^2 under the
/// different-treatments allocation.
double variance_factor(double pi_complement, double pi12);

/// Three-stratum structure of the scenario.
PopulationStructure two_pop_structure(double pi1_only, double pi2_only, double pi12);
PwerProblem two_pop_problem(const TwoPopScenario& scenario);

struct CriticalPair {
  double c_pwer = 0.0;
  double c_fwer = 0.0;
};

CriticalPair critical_values(const TwoPopScenario& scenario);

/// ((z_{1-beta} + c) / (z_{1-beta} + z_{1-alpha}))^2.
double sample_size_factor(double c, double alpha, double beta);

/// ceil((z_{1-beta} + c)^2 / delta^2).
long long required_n(double c, double beta, double delta);

struct InflationRow {
  double pi12 = 0.0;
  double q_pwer = 0.0;
  double q_fwer = 0.0;
};

std::vector<InflationRow> inflation_sweep(TwoPopKind kind, double alpha, double beta,
                                          const std::vector<double>& pi12_grid,
                                          unsigned threads = 0);

/// CSV with header `pi12,q_pwer,q_fwer` and 6 decimals.
std::string inflation_csv(const std::vector<InflationRow>& rows);

}  // namespace pwer
