#include "genz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "pwer/error.hpp"

namespace pwer::detail {

namespace {

constexpr double kPivotTol = 1e-10;
constexpr int kShifts = 12;
constexpr std::size_t kInitialPoints = 1024;

double phi_inv_clamped(double p) {
  p = std::clamp(p, std::numeric_limits<double>::min(), 1.0 - 0x1p-53);
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double truncated_mean(double beta) {
  const double mass = norm_cdf(beta);
  if (mass < 1e-300) return beta;
  const double density = std::exp(-0.5 * beta * beta) / std::sqrt(2.0 * std::numbers::pi);
  return -density / mass;
}

std::vector<double> lattice_generators(std::size_t count) {
  std::vector<double> gen;
  for (int candidate = 2; gen.size() < count; ++candidate) {
    bool prime = true;
    for (int q = 2; q * q <= candidate; ++q) {
      if (candidate % q == 0) {
        prime = false;
        break;
      }
    }
    if (prime) {
      const double r = std::sqrt(static_cast<double>(candidate));
      gen.push_back(r - std::floor(r));
    }
  }
  return gen;
}

struct Ordered {
  Eigen::MatrixXd chol;  // lower triangular, zero columns for degenerate pivots
  Eigen::VectorXd bounds;
};

// Cholesky with Genz-Bretz prioritization: at each step pick the remaining
// variable with the smallest conditional probability of its constraint.
Ordered prioritized_cholesky(std::span<const double> upper, const Eigen::MatrixXd& corr) {
  const auto d = corr.rows();
  Eigen::MatrixXd a = corr;
  Eigen::VectorXd b(d);
  for (Eigen::Index i = 0; i < d; ++i) b(i) = upper[static_cast<std::size_t>(i)];
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(d);

  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::Index best = i;
    double best_p = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = i; j < d; ++j) {
      const double shift = l.row(j).head(i).dot(y.head(i));
      const double var = a(j, j) - l.row(j).head(i).squaredNorm();
      const double p = var > kPivotTol ? norm_cdf((b(j) - shift) / std::sqrt(var))
                                       : (shift <= b(j) ? 1.0 : 0.0);
      if (p < best_p) {
        best_p = p;
        best = j;
      }
    }
    if (best != i) {
      std::swap(b(i), b(best));
      a.row(i).swap(a.row(best));
      a.col(i).swap(a.col(best));
      l.row(i).swap(l.row(best));
    }
    const double var = a(i, i) - l.row(i).head(i).squaredNorm();
    if (var > kPivotTol) {
      const double piv = std::sqrt(var);
      l(i, i) = piv;
      for (Eigen::Index m = i + 1; m < d; ++m) {
        l(m, i) = (a(m, i) - l.row(m).head(i).dot(l.row(i).head(i))) / piv;
      }
      y(i) = truncated_mean((b(i) - l.row(i).head(i).dot(y.head(i))) / piv);
    }
  }
  return {std::move(l), std::move(b)};
}

}  // namespace

ProbEstimate genz_cdf(std::span<const double> upper, const Eigen::MatrixXd& corr, double df,
                      const MvOptions& options) {
  const Ordered ord = prioritized_cholesky(upper, corr);
  const auto d = corr.rows();
  const bool student = std::isfinite(df);
  const std::size_t offset = student ? 1 : 0;
  const std::size_t dims = offset + static_cast<std::size_t>(d - 1);
  const std::vector<double> gen = lattice_generators(std::max<std::size_t>(dims, 1));

  std::vector<double> y(static_cast<std::size_t>(d));
  auto integrand = [&](const std::vector<double>& u) {
    double scale = 1.0;
    if (student) {
      const double v = std::clamp(u[0], 1e-15, 1.0 - 1e-15);
      scale = std::sqrt(2.0 * boost::math::gamma_p_inv(df / 2.0, v) / df);
    }
    double f = 1.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      double shift = 0.0;
      for (Eigen::Index k = 0; k < i; ++k) shift += ord.chol(i, k) * y[static_cast<std::size_t>(k)];
      const double bound = ord.bounds(i) * scale;
      const double piv = ord.chol(i, i);
      if (piv > 0.0) {
        const double e = norm_cdf((bound - shift) / piv);
        f *= e;
        if (f == 0.0) return 0.0;
        if (i + 1 < d) {
          y[static_cast<std::size_t>(i)] = phi_inv_clamped(u[offset + static_cast<std::size_t>(i)] * e);
        }
      } else {
        if (shift > bound) return 0.0;
        y[static_cast<std::size_t>(i)] = 0.0;
      }
    }
    return f;
  };

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> point(dims);
  std::vector<double> state(dims);
  std::vector<double> shift(dims);

  double value = 0.0;
  double abs_error = 0.0;
  for (std::size_t n = kInitialPoints;; n *= 2) {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int s = 0; s < kShifts; ++s) {
      for (std::size_t j = 0; j < dims; ++j) {
        shift[j] = unif(rng);
        state[j] = shift[j];
      }
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = 0; j < dims; ++j) {
          state[j] += gen[j];
          state[j] -= std::floor(state[j]);
          point[j] = std::abs(2.0 * state[j] - 1.0);
        }
        acc += integrand(point);
      }
      const double est = acc / static_cast<double>(n);
      sum += est;
      sum_sq += est * est;
    }
    value = sum / kShifts;
    const double var = std::max(0.0, (sum_sq - kShifts * value * value) / (kShifts - 1));
    abs_error = 3.0 * std::sqrt(var / kShifts);
    if (abs_error <= options.abs_tol || n >= options.max_points) break;
  }
  return {std::clamp(value, 0.0, 1.0), abs_error, ProbMethod::monte_carlo};
}

}  // namespace pwer::detail
