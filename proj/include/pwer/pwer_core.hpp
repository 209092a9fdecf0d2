#pragma once

// Population-wise error rate (PWER): the prevalence-weighted average over
// disjoint strata P_J of the probability that some true null hypothesis
// affecting P_J is rejected,
//
//   PWER(c) = sum_J pi_J * P( union_{i in J, i true} { Z_i > w_i c } ).
//
// This module evaluates PWER and FWER at given thresholds, solves for the
// single-step critical value, computes adjusted p-values and the dual
// simultaneous confidence bounds.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "pwer/mvdist.hpp"
#include "pwer/popmodel.hpp"

namespace pwer {

/// Joint null distribution of the test statistics.
struct CorrelationModel {
  CorrelationMatrix matrix;
  double df = kInfiniteDf;
};

class PwerProblem {
 public:
  /// true_nulls defaults to the global null (all hypotheses); weights
  /// default to 1.
  PwerProblem(PopulationStructure structure, CorrelationModel corr,
              std::optional<Subset> true_nulls = {}, std::vector<double> weights = {});

  const PopulationStructure& structure() const { return structure_; }
  const CorrelationModel& corr() const { return corr_; }
  Subset true_nulls() const { return true_nulls_; }
  const std::vector<double>& weights() const { return weights_; }
  int m() const { return structure_.m(); }

  /// Per-hypothesis rejection thresholds w_i * c.
  std::vector<double> thresholds(double c) const;

  /// Strata that can suffer a type I error: prevalence above the pruning
  /// floor and at least one true null among their hypotheses. Each entry is
  /// (prevalence, 0-based indices of the true nulls concerned).
  const std::vector<std::pair<double, std::vector<int>>>& error_strata() const {
    return error_strata_;
  }

  /// True when every stratum union (and hence the PWER) has a closed-form or
  /// quadrature evaluation.
  bool deterministic() const;

 private:
  PopulationStructure structure_;
  CorrelationModel corr_;
  Subset true_nulls_ = 0;
  std::vector<double> weights_;
  std::vector<std::pair<double, std::vector<int>>> error_strata_;
};

/// PWER at per-hypothesis thresholds.
ProbEstimate evaluate_pwer(const PwerProblem& problem, std::span<const double> thresholds,
                           const MvOptions& options = {});
/// FWER, P(reject some true null), at per-hypothesis thresholds.
ProbEstimate evaluate_fwer(const PwerProblem& problem, std::span<const double> thresholds,
                           const MvOptions& options = {});

/// PWER / FWER at the weighted thresholds w_i * c.
double pwer_at(const PwerProblem& problem, double c, const MvOptions& options = {});
double fwer_at(const PwerProblem& problem, double c, const MvOptions& options = {});

enum class Backend { automatic, deterministic, monte_carlo };

std::string_view to_string(Backend backend);

struct SolverOptions {
  Backend backend = Backend::automatic;
  double c_tol = 1e-8;               ///< width of the final bracket on c
  double lower = 0.0;                ///< search bracket
  double upper = 15.0;
  std::size_t mc_draws = 1'000'000;  ///< ensemble size for the Monte Carlo backend
  std::uint64_t seed = 20240611;
  unsigned threads = 0;
};

struct CriticalValueResult {
  double c_star = 0.0;
  double achieved_level = 0.0;  ///< PWER at c_star on the backend used to solve
  double abs_error = 0.0;       ///< 3 standard errors (Monte Carlo), 0 otherwise
  std::size_t iterations = 0;
  std::pair<double, double> bracket;
  Backend backend = Backend::deterministic;
};

/// Smallest c in [lower, upper] with PWER(w c) <= alpha. Throws
/// ValidationError for alpha outside (0, 1) and NumericalError when the
/// bracket does not contain a solution.
CriticalValueResult solve_critical(const PwerProblem& problem, double alpha,
                                   const SolverOptions& options = {});

/// Same search for the FWER over the true nulls (single-step max-test).
CriticalValueResult solve_fwer_critical(const PwerProblem& problem, double alpha,
                                        const SolverOptions& options = {});

/// Closed-form PWER critical value for two independent statistics with
/// equal-sized populations overlapping in a share pi12 in (0, 1].
double closed_form_independent_pair(double alpha, double pi12);

/// PWER-adjusted p-values: p_j = PWER at c = z_j / w_j, so that
/// p_j <= alpha exactly when z_j >= w_j c*.
std::vector<double> adjusted_p(const PwerProblem& problem, std::span<const double> z_obs,
                               const MvOptions& options = {});

enum class Side { lower, upper, two_sided };

std::string_view to_string(Side side);
Side side_from_string(std::string_view s);

struct SciResult {
  std::vector<double> lower;  ///< -inf for upper-only bounds
  std::vector<double> upper;  ///< +inf for lower-only bounds
  double c_star = 0.0;
  Side side = Side::lower;
};

/// Wald-type dual bounds theta_hat -/+ c* SE. Two-sided intervals reuse the
/// one-sided c*, doubling the non-coverage probability.
SciResult sci_bounds(std::span<const double> estimates, std::span<const double> ses,
                     double c_star, Side side);

struct CoverageEstimate {
  double coverage = 0.0;
  double standard_error = 0.0;
  std::size_t n_reps = 0;
  std::size_t duality_violations = 0;  ///< replications where bound and dual test disagree
};

/// Average simultaneous coverage sum_J pi_J P(all theta_j, j in J, covered)
/// of the bounds built with c_star, simulated at the boundary theta = delta.
CoverageEstimate coverage_sim(const PwerProblem& problem, double c_star, Side side,
                              std::size_t n_reps, std::uint64_t seed, unsigned threads = 0);

}  // namespace pwer
