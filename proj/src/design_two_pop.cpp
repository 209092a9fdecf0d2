#include "pwer/design_two_pop.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "pwer/error.hpp"
#include "pwer/parallel.hpp"

namespace pwer {

std::string_view to_string(TwoPopKind kind) {
  switch (kind) {
    case TwoPopKind::independent_studies: return "indep";
    case TwoPopKind::different_treatments: return "i";
    case TwoPopKind::same_treatment: return "ii";
  }
  return "unknown";
}

TwoPopKind two_pop_kind_from_string(std::string_view s) {
  if (s == "indep" || s == "independent") return TwoPopKind::independent_studies;
  if (s == "i" || s == "different") return TwoPopKind::different_treatments;
  if (s == "ii" || s == "same") return TwoPopKind::same_treatment;
  throw ValidationError("scenario must be indep, i or ii");
}

void TwoPopScenario::validate() const {
  if (!(pi12 >= 0.0 && pi12 <= 1.0)) throw ValidationError("pi12 must lie in [0, 1]");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("beta must lie in (0, 1)");
}

double variance_factor(double pi_complement, double pi12) {
  if (!(pi_complement >= 0.0 && pi12 >= 0.0) || pi_complement + pi12 <= 0.0) {
    throw ValidationError("variance_factor needs non-negative prevalences with positive sum");
  }
  const double pi = pi_complement + pi12;
  double v2 = 0.0;
  if (pi_complement > 0.0) v2 += (pi_complement / pi) * (pi_complement / pi) * (2.0 / pi_complement);
  if (pi12 > 0.0) v2 += (pi12 / pi) * (pi12 / pi) * (3.0 / pi12);
  return v2;
}

double two_pop_correlation(TwoPopKind kind, double pi1_only, double pi2_only, double pi12) {
  if (pi1_only < 0.0 || pi2_only < 0.0 || pi12 < 0.0) {
    throw ValidationError("prevalences must be non-negative");
  }
  const double pi1 = pi1_only + pi12;
  const double pi2 = pi2_only + pi12;
  if (kind == TwoPopKind::independent_studies || pi12 == 0.0 || pi1 == 0.0 || pi2 == 0.0) {
    return 0.0;
  }
  if (kind == TwoPopKind::same_treatment) return std::min(1.0, pi12 / std::sqrt(pi1 * pi2));
  const double v1 = std::sqrt(variance_factor(pi1_only, pi12));
  const double v2 = std::sqrt(variance_factor(pi2_only, pi12));
  return 3.0 * pi12 / (2.0 * pi1 * pi2 * v1 * v2);
}

double scenario_correlation(const TwoPopScenario& scenario) {
  scenario.validate();
  switch (scenario.kind) {
    case TwoPopKind::independent_studies: return 0.0;
    case TwoPopKind::different_treatments:
      return 1.5 * scenario.pi12 / (1.0 + 2.0 * scenario.pi12);
    case TwoPopKind::same_treatment: return 2.0 * scenario.pi12 / (1.0 + scenario.pi12);
  }
  return 0.0;
}

PopulationStructure two_pop_structure(double pi1_only, double pi2_only, double pi12) {
  return PopulationStructure::make(
      {{subset_of({1}), pi1_only}, {subset_of({2}), pi2_only}, {subset_of({1, 2}), pi12}}, 2);
}

PwerProblem two_pop_problem(const TwoPopScenario& scenario) {
  scenario.validate();
  const double rest = scenario.pi_complement();
  return PwerProblem(two_pop_structure(rest, rest, scenario.pi12),
                     {CorrelationMatrix::pair(scenario_correlation(scenario)), kInfiniteDf});
}

CriticalPair critical_values(const TwoPopScenario& scenario) {
  const PwerProblem problem = two_pop_problem(scenario);
  SolverOptions opts;
  opts.backend = Backend::deterministic;
  return {solve_critical(problem, scenario.alpha, opts).c_star,
          solve_fwer_critical(problem, scenario.alpha, opts).c_star};
}

double sample_size_factor(double c, double alpha, double beta) {
  if (!(alpha > 0.0 && alpha < 1.0) || !(beta > 0.0 && beta < 1.0)) {
    throw ValidationError("alpha and beta must lie in (0, 1)");
  }
  const double zb = norm_quantile(1.0 - beta);
  const double ratio = (zb + c) / (zb + norm_quantile(1.0 - alpha));
  return ratio * ratio;
}

long long required_n(double c, double beta, double delta) {
  if (!(delta > 0.0)) throw ValidationError("effect size delta must be positive");
  if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("beta must lie in (0, 1)");
  const double root = (norm_quantile(1.0 - beta) + c) / delta;
  return std::max(1LL, static_cast<long long>(std::ceil(root * root)));
}

std::vector<InflationRow> inflation_sweep(TwoPopKind kind, double alpha, double beta,
                                          const std::vector<double>& pi12_grid,
                                          unsigned threads) {
  std::vector<InflationRow> rows(pi12_grid.size());
  parallel_for(pi12_grid.size(), threads, [&](std::size_t k) {
    const TwoPopScenario scenario{kind, pi12_grid[k], alpha, beta};
    const CriticalPair c = critical_values(scenario);
    rows[k] = {pi12_grid[k], sample_size_factor(c.c_pwer, alpha, beta),
               sample_size_factor(c.c_fwer, alpha, beta)};
  });
  return rows;
}

std::string inflation_csv(const std::vector<InflationRow>& rows) {
  std::ostringstream os;
  os << "pi12,q_pwer,q_fwer\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f\n", r.pi12, r.q_pwer, r.q_fwer);
    os << line;
  }
  return os.str();
}

}  // namespace pwer
