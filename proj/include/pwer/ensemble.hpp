#pragma once

// Common-random-number ensembles for exceedance probabilities of unions
// P(max_{i in G} X_i / d_i > c). Every candidate c is evaluated on the same
// stored draws, so estimated error rates are monotone step functions of c.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pwer/mvdist.hpp"

namespace pwer {

class ExceedanceEnsemble {
 public:
  /// groups: member index lists (0-based) into the correlation matrix.
  /// divisors: per-coordinate threshold multipliers d_i > 0 (empty = all 1).
  ExceedanceEnsemble(const CorrelationMatrix& corr, double df,
                     std::vector<std::vector<int>> groups, std::vector<double> divisors,
                     std::size_t n_draws, std::uint64_t seed, unsigned threads = 0);

  std::size_t draws() const { return n_draws_; }
  std::size_t groups() const { return n_groups_; }

  /// Group maximum of draw `d`.
  double maximum(std::size_t draw, std::size_t group) const {
    return maxima_[draw * n_groups_ + group];
  }

  /// (1/n) sum_d sum_g w_g 1{M_dg > c}.
  double rate(double c, std::span<const double> weights) const;

  /// Monte Carlo standard error of rate(c, weights).
  double standard_error(double c, std::span<const double> weights) const;

 private:
  std::size_t n_draws_ = 0;
  std::size_t n_groups_ = 0;
  std::vector<double> maxima_;  // n_draws x n_groups, row-major
};

/// rate(c) of an ensemble for fixed weights as a sorted step function;
/// evaluation is a binary search.
class ExceedanceCurve {
 public:
  ExceedanceCurve(const ExceedanceEnsemble& ensemble, std::span<const double> weights);

  double operator()(double c) const;

 private:
  std::vector<double> values_;      // ascending
  std::vector<double> tail_weight_;  // tail_weight_[k] = sum of weights of values_[k..]
  double n_draws_ = 1.0;
};

}  // namespace pwer
