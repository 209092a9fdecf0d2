#pragma once

// Type I error of the PWER procedure for two overlapping populations when
// the stratum prevalences are replaced by multinomial estimates.
//
// Strata: {1} and {2} (one population only) and {1,2} (both). A grid point
// fixes the true prevalences of {1} and {2}; the overlap gets the rest.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pwer/design_two_pop.hpp"

namespace pwer {

struct TwoPopPrevalences {
  double only1 = 0.0;
  double only2 = 0.0;
  double both = 0.0;

  void validate() const;
};

struct TwoPopCounts {
  std::uint64_t only1 = 0;
  std::uint64_t only2 = 0;
  std::uint64_t both = 0;

  std::uint64_t total() const { return only1 + only2 + both; }
  friend bool operator==(const TwoPopCounts&, const TwoPopCounts&) = default;
};

/// Estimated critical value and the correlation it was solved with.
struct EstimatedCritical {
  double c_hat = 0.0;
  double rho = 0.0;           ///< Corr(Z1, Z2) given the realized counts
  bool testable1 = true;      ///< population 1 has patients
  bool testable2 = true;
  TwoPopPrevalences estimate;  ///< prevalences used for solving
};

/// Solves PWER = alpha on the estimated prevalences with the correlation
/// implied by the counts. With pi_min, an overlap estimate below the floor is
/// raised to pi_min and the other two are scaled down to keep the sum at 1.
/// A population without patients is not tested; a stratum without patients
/// drops out of the estimated structure unless it is floored.
EstimatedCritical estimated_critical(const TwoPopCounts& counts, TwoPopKind kind, double alpha,
                                     std::optional<double> pi_min = {});

/// sum_J pi_J P(some tested H_i, i in J, rejected at c) under the global
/// null with Corr(Z1, Z2) = rho.
double true_pwer_at(double c, double rho, const TwoPopPrevalences& truth, bool testable1 = true,
                    bool testable2 = true);

/// True PWER of the procedure run on one realized count vector.
double actual_pwer_one_rep(const TwoPopCounts& counts, const TwoPopPrevalences& truth,
                           TwoPopKind kind, double alpha, std::optional<double> pi_min = {});

TwoPopCounts draw_counts(const TwoPopPrevalences& truth, std::uint64_t n, std::uint64_t seed);

struct PrevSimConfig {
  TwoPopKind kind = TwoPopKind::different_treatments;
  std::uint64_t n_total = 50;
  double alpha = 0.025;
  std::size_t n_reps = 10'000;
  std::uint64_t seed = 0;
  std::optional<double> pi_min;
  int grid_steps = 20;  ///< grid spacing 1 / grid_steps on each axis
  unsigned threads = 0;

  void validate() const;
};

nlohmann::json to_json(const PrevSimConfig& config);
PrevSimConfig prevsim_config_from_json(const nlohmann::json& j);

struct GridPoint {
  double pi1 = 0.0;  ///< true prevalence of stratum {1}
  double pi2 = 0.0;  ///< true prevalence of stratum {2}
  double mean_pwer = 0.0;
  double mc_se = 0.0;
};

/// Grid points (i, j) / grid_steps with i + j <= grid_steps, i outer.
std::vector<GridPoint> prevalence_effect_grid(const PrevSimConfig& config);

/// CSV with header `pi1,pi2,mean_pwer,mc_se` and 6 decimals.
std::string grid_csv(const std::vector<GridPoint>& grid);

}  // namespace pwer
