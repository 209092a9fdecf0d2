#pragma once

// Umbrella trial with l disjoint strata, each comparing its own experimental
// treatment to a common control. Every non-empty subset S of strata defines
// a subset hypothesis H^S: theta^S <= 0 with theta^S the prevalence-weighted
// average effect over S, tested with a pooled-variance t statistic T^S.
// Subsets are bitmasks (stratum i is bit i - 1); statistic vectors are
// indexed by S - 1 for S = 1 .. 2^l - 1.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pwer/mvdist.hpp"
#include "pwer/popmodel.hpp"

namespace pwer {

inline constexpr int kMaxUmbrellaStrata = 8;

struct UmbrellaConfig {
  int l = 2;
  int n_total = 1056;
  std::vector<double> pi;  ///< empty means equal prevalences
  double q = 1.0;          ///< fraction of strata with zero effect
  double tau = 0.0;        ///< relative half-range of the positive effects
  double theta_overall = 0.0;
  double sigma = 1.0;
  double alpha = 0.025;

  void validate() const;
  std::vector<double> prevalences() const;
  /// N - 2l, the residual degrees of freedom of the linear model.
  double df() const;
  /// Per-stratum sample sizes N pi_i rounded to an even number.
  std::vector<int> stratum_sizes() const;
};

nlohmann::json to_json(const UmbrellaConfig& config);
UmbrellaConfig umbrella_config_from_json(const nlohmann::json& j);

/// Effects: q l zeros first, then l - q l equidistant positive effects from
/// theta_overall (1 - tau) to theta_overall (1 + tau).
std::vector<double> theta_grid(int l, double q, double tau, double theta_overall);

/// theta^S = sum_{i in S} (pi_i / pi^S) theta_i.
double subset_effect(std::span<const double> theta, std::span<const double> pi, Subset s);

/// Null correlation of (T^S, T^S'): pi^{S cap S'} / sqrt(pi^S pi^S').
double subset_corr(std::span<const double> pi, Subset s, Subset t);

/// Correlation of all 2^l - 1 subset statistics, carrying the rank-l
/// loading factor used for sampling.
CorrelationMatrix subset_correlation_matrix(std::span<const double> pi);

struct CriticalOptions {
  std::size_t draws = 1'000'000;
  std::uint64_t seed = 20240611;
  unsigned threads = 0;
};

struct UmbrellaCriticals {
  double c_fwer = 0.0;
  double c_pwer = 0.0;
  double fwer_abs_error = 0.0;  ///< 3 standard errors of the FWER estimate at c_fwer
  double pwer_abs_error = 0.0;  ///< 3 standard errors of the PWER estimate at c_pwer
};

/// Both critical values from one common-random-number ensemble of the joint
/// null t statistics (df = N - 2l). l = 1 is solved exactly.
UmbrellaCriticals umbrella_criticals(const UmbrellaConfig& config,
                                     const CriticalOptions& options = {});

/// Upper alpha quantile of max_S T^S under the global null.
double fwer_critical(const UmbrellaConfig& config, const CriticalOptions& options = {});

/// c with sum_i pi_i P(max_{S contains i} T^S > c) = alpha under the global null.
double pwer_critical(const UmbrellaConfig& config, const CriticalOptions& options = {});

/// argmax_S T^S if it exceeds c, else 0 (empty). Ties go to the smaller bitmask.
Subset select_subset(std::span<const double> t_stats, double c);

enum class Control { pwer, fwer };

std::string_view to_string(Control control);
Control control_from_string(std::string_view s);

struct TrialOutcome {
  std::vector<double> t_stats;
  Subset selected = 0;
  std::vector<Subset> rejected;
};

/// One simulated trial: per-stratum arm means under Y = mu + theta X + eps,
/// pooled residual variance over the 2l cells, T^S for every S.
std::vector<double> simulate_t_stats(const UmbrellaConfig& config, std::span<const double> theta,
                                     std::uint64_t seed);

TrialOutcome evaluate_trial(std::span<const double> t_stats, double c);

struct MeanEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
};

struct SimulationReport {
  Control control = Control::pwer;
  double critical_value = 0.0;
  MeanEstimate power;
  MeanEstimate correct;
  MeanEstimate false_fraction;
  MeanEstimate rae;
  MeanEstimate any_selected;    ///< P(S* non-empty)
  MeanEstimate realized_pwer;   ///< stratum-weighted rejection of true H^S
  MeanEstimate realized_fwer;   ///< rejection of any true H^S
  std::size_t n_reps = 0;
  std::uint64_t seed = 0;
  UmbrellaConfig config;
};

nlohmann::json to_json(const SimulationReport& report);

struct PairedReport {
  SimulationReport pwer;
  SimulationReport fwer;
  /// Replications where S*_F is non-empty but S*_P differs from it.
  std::size_t dominance_violations = 0;
};

/// Both procedures on the same simulated trials.
PairedReport simulate_pair(const UmbrellaConfig& config, const UmbrellaCriticals& criticals,
                           std::size_t n_reps, std::uint64_t seed, unsigned threads = 0);

SimulationReport simulate(const UmbrellaConfig& config, Control control, std::size_t n_reps,
                          std::uint64_t seed, const CriticalOptions& options = {});

}  // namespace pwer
