#pragma once

// Univariate, bivariate and multivariate normal / t probabilities and
// reproducible sampling of correlated statistics.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace pwer {

/// Degrees of freedom value meaning "normal distribution".
inline constexpr double kInfiniteDf = std::numeric_limits<double>::infinity();

/// Standard normal distribution function. Throws ValidationError on NaN.
/// Infinite arguments map to 0 and 1.
double norm_cdf(double x);

/// Standard normal upper tail, 1 - norm_cdf(x), without cancellation.
double norm_sf(double x);

/// Standard normal quantile; p must lie in the open unit interval.
double norm_quantile(double p);

/// Student t distribution function; df = kInfiniteDf gives norm_cdf.
double t_cdf(double x, double df);

/// Student t quantile; df = kInfiniteDf gives norm_quantile.
double t_quantile(double p, double df);

/// P(X <= a, Y <= b) for a standard bivariate normal pair with correlation
/// rho. Bounds may be infinite. Deterministic Gauss-Legendre quadrature
/// (Drezner-Wesolowsky / Genz), absolute error below 1e-14.
double bvn_cdf(double a, double b, double rho);

/// Symmetric correlation matrix with unit diagonal, together with a
/// factor A such that R = A A^T used for sampling.
///
/// Construction validates shape, symmetry, the unit diagonal and the
/// [-1, 1] range. Positive semi-definite input (including singular input
/// such as rho = 1) is accepted as is. An indefinite matrix is repaired by
/// clipping eigenvalues below 1e-10 and rescaling to unit diagonal; a
/// warning is written to std::clog and repaired() reports true.
class CorrelationMatrix {
 public:
  CorrelationMatrix() = default;
  explicit CorrelationMatrix(Eigen::MatrixXd values);

  /// Builds R = A A^T from loadings whose rows have unit norm. The loadings
  /// are kept as the sampling factor, which avoids factorizing large
  /// low-rank matrices.
  static CorrelationMatrix from_loadings(Eigen::MatrixXd loadings);
  static CorrelationMatrix identity(int dim);
  static CorrelationMatrix equicorrelated(int dim, double rho);
  static CorrelationMatrix pair(double rho);

  int dim() const { return static_cast<int>(values_.rows()); }
  double operator()(int i, int j) const { return values_(i, j); }
  const Eigen::MatrixXd& matrix() const { return values_; }
  const Eigen::MatrixXd& factor() const { return factor_; }
  bool repaired() const { return repaired_; }
  bool is_identity() const;

  /// Principal sub-matrix over the given (0-based) indices.
  CorrelationMatrix submatrix(std::span<const int> indices) const;

 private:
  struct Trusted {};
  CorrelationMatrix(Eigen::MatrixXd values, Eigen::MatrixXd factor, Trusted);

  Eigen::MatrixXd values_;
  Eigen::MatrixXd factor_;
  bool repaired_ = false;
};

enum class ProbMethod { quadrature, monte_carlo };

std::string_view to_string(ProbMethod method);

struct ProbEstimate {
  double value = 0.0;
  double abs_error = 0.0;  ///< three standard errors for Monte Carlo, 0 otherwise
  ProbMethod method = ProbMethod::quadrature;
};

struct MvOptions {
  double abs_tol = 1e-4;              ///< target for ProbEstimate::abs_error
  std::uint64_t seed = 20240611;      ///< lattice shift seed
  std::size_t max_points = 1u << 22;  ///< cap on lattice points per shift
};

/// P(X_i <= upper_i for all i) where X is centered multivariate normal
/// (df = kInfiniteDf) or multivariate t with correlation R. Dimensions one
/// and two (normal) and independent coordinates are evaluated
/// deterministically; everything else uses randomized lattice rules on
/// Genz's separation-of-variables transform.
ProbEstimate mv_cdf(std::span<const double> upper, const CorrelationMatrix& corr,
                    double df = kInfiniteDf, const MvOptions& options = {});

/// Draws rows X = A z / s with z standard normal and s = sqrt(chi2_df / df)
/// (s = 1 for the normal case). Draws are produced in fixed blocks whose
/// generators are seeded from (seed, block index), so output does not
/// depend on the worker count.
class JointSampler {
 public:
  static constexpr std::size_t kBlockSize = 4096;

  JointSampler(const CorrelationMatrix& corr, double df);

  int dim() const { return static_cast<int>(factor_.rows()); }
  double df() const { return df_; }

  /// Fills `out` (dim x count) with the draws of block `block`.
  void fill_block(std::uint64_t seed, std::size_t block, std::size_t count,
                  Eigen::MatrixXd& out) const;

 private:
  Eigen::MatrixXd factor_;
  double df_;
};

using DrawMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n_draws x dim matrix of joint draws. threads = 0 uses all cores.
DrawMatrix sample_joint(const CorrelationMatrix& corr, double df, std::size_t n_draws,
                        std::uint64_t seed, unsigned threads = 0);

}  // namespace pwer
