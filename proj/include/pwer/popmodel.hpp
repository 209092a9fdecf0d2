#pragma once

// Overlapping sub-populations represented as disjoint strata. A stratum is
// identified by the set J of hypotheses (sub-populations) its patients
// belong to; hypothesis i is stored as bit (i - 1) of a Subset.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace pwer {

using Subset = std::uint32_t;

/// Largest supported number of hypotheses.
inline constexpr int kMaxHypotheses = 24;

/// Bitmask from 1-based hypothesis indices.
Subset subset_of(std::span<const int> indices);
Subset subset_of(std::initializer_list<int> indices);
/// 1-based indices of a bitmask, ascending.
std::vector<int> indices_of(Subset s);
/// 0-based indices of a bitmask, ascending.
std::vector<int> zero_based(Subset s);
std::string format_subset(Subset s);

struct Stratum {
  Subset subset = 0;
  double prevalence = 0.0;

  friend bool operator==(const Stratum&, const Stratum&) = default;
};

class PopulationStructure {
 public:
  /// Validates and canonicalizes: zero-prevalence strata are dropped and
  /// strata are sorted by ascending bitmask. When m is omitted it is the
  /// highest hypothesis index used.
  static PopulationStructure make(std::vector<Stratum> strata, std::optional<int> m = {});

  /// Nested populations P_1 > P_2 > ... > P_m given their prevalences
  /// 1 = p_1 > p_2 > ... > p_m > 0. Stratum {1..i} gets p_i - p_{i+1}.
  static PopulationStructure nested(std::span<const double> population_prevalences);

  int m() const { return m_; }
  const std::vector<Stratum>& strata() const { return strata_; }

  /// Hypotheses whose rejection affects stratum J, i.e. J restricted to 1..m.
  Subset hypotheses_affecting(Subset j) const;

  /// Stored strata whose subset contains hypothesis i (1-based).
  std::vector<Subset> strata_containing(int i) const;

  /// Total prevalence of the sub-population of hypothesis i.
  double population_prevalence(int i) const;

  friend bool operator==(const PopulationStructure&, const PopulationStructure&) = default;

 private:
  int m_ = 0;
  std::vector<Stratum> strata_;
};

/// JSON form {"m": int, "strata": [{"subset": [int...], "pi": float}...]}.
nlohmann::json to_json(const PopulationStructure& s);
PopulationStructure structure_from_json(const nlohmann::json& j);

struct StratumCount {
  Subset subset = 0;
  std::uint64_t count = 0;
};

struct PrevalenceEstimate {
  std::vector<Stratum> estimates;  // in input order
  std::uint64_t total_n = 0;
  bool floor_applied = false;
};

/// Multinomial maximum likelihood estimate n_J / N. With pi_min, strata
/// whose estimate is below the floor (including zero counts) are set to
/// pi_min and the remaining estimates are rescaled to fill 1 - k * pi_min.
PrevalenceEstimate prevalence_mle(std::span<const StratumCount> counts,
                                  std::optional<double> pi_min = {});

}  // namespace pwer
