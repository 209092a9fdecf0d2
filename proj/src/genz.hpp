#pragma once

#include <span>

#include <Eigen/Dense>

#include "pwer/mvdist.hpp"

namespace pwer::detail {

// Randomized lattice rule on the separation-of-variables transform with
// variable prioritization. `corr` may be singular.
ProbEstimate genz_cdf(std::span<const double> upper, const Eigen::MatrixXd& corr, double df,
                      const MvOptions& options);

}  // namespace pwer::detail
