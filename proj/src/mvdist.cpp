#include "pwer/mvdist.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <numbers>
#include <random>
#include <string>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "genz.hpp"
#include "pwer/error.hpp"
#include "pwer/parallel.hpp"

namespace pwer {

namespace {

constexpr double kEntryTol = 1e-12;
constexpr double kEigenFloor = 1e-10;

void require_not_nan(double x, const char* what) {
  if (std::isnan(x)) throw ValidationError(std::string(what) + ": NaN argument");
}

// P(X > h, Y > k), Genz's BVNU.
double bvn_upper(double h, double k, double r) {
  static constexpr std::array<double, 3> w6 = {0.1713244923791705, 0.3607615730481384,
                                               0.4679139345726904};
  static constexpr std::array<double, 3> x6 = {0.9324695142031522, 0.6612093864662647,
                                               0.2386191860831970};
  static constexpr std::array<double, 6> w12 = {0.04717533638651177, 0.1069393259953183,
                                                0.1600783285433464,  0.2031674267230659,
                                                0.2334925365383547,  0.2491470458134029};
  static constexpr std::array<double, 6> x12 = {0.9815606342467191, 0.9041172563704750,
                                                0.7699026741943050, 0.5873179542866171,
                                                0.3678314989981802, 0.1252334085114692};
  static constexpr std::array<double, 10> w20 = {
      0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
      0.1019301198172404,  0.1181945319615184,  0.1316886384491766,  0.1420961093183821,
      0.1491729864726037,  0.1527533871307259};
  static constexpr std::array<double, 10> x20 = {
      0.9931285991850949, 0.9639719272779138, 0.9122344282513259, 0.8391169718222188,
      0.7463319064601508, 0.6360536807265150, 0.5108670019508271, 0.3737060887154196,
      0.2277858511416451, 0.07652652113349733};

  std::span<const double> w;
  std::span<const double> x;
  if (std::abs(r) < 0.3) {
    w = w6;
    x = x6;
  } else if (std::abs(r) < 0.75) {
    w = w12;
    x = x12;
  } else {
    w = w20;
    x = x20;
  }

  constexpr double two_pi = 2.0 * std::numbers::pi;
  double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r) / 2.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (const double node : {1.0 - x[i], 1.0 + x[i]}) {
        const double sn = std::sin(asr * node);
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    return bvn * asr / two_pi + norm_sf(h) * norm_sf(k);
  }

  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (std::abs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 80.0;
    double asr = -(bs / as + hk) / 2.0;
    if (asr > -100.0) {
      bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
    }
    if (hk > -100.0) {
      const double b = std::sqrt(bs);
      const double sp = std::sqrt(two_pi) * norm_sf(b / a);
      bvn -= std::exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
    }
    a /= 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (const double node : {1.0 - x[i], 1.0 + x[i]}) {
        const double xs = (a * node) * (a * node);
        asr = -(bs / xs + hk) / 2.0;
        if (asr <= -100.0) continue;
        const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
        const double rs = std::sqrt(1.0 - xs);
        const double ep = std::exp(-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
        sum += w[i] * std::exp(asr) * (sp - ep);
      }
    }
    bvn = (a * sum - bvn) / two_pi;
  }
  if (r > 0.0) return bvn + norm_sf(std::max(h, k));
  if (h >= k) return -bvn;
  const double band = h < 0.0 ? norm_cdf(k) - norm_cdf(h) : norm_sf(h) - norm_sf(k);
  return band - bvn;
}

}  // namespace

double norm_cdf(double x) {
  require_not_nan(x, "norm_cdf");
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double norm_sf(double x) {
  require_not_nan(x, "norm_sf");
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ValidationError("norm_quantile: probability must lie in (0, 1)");
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double t_cdf(double x, double df) {
  require_not_nan(x, "t_cdf");
  if (!(df > 0.0)) throw ValidationError("t_cdf: degrees of freedom must be positive");
  if (std::isinf(df)) return norm_cdf(x);
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  return boost::math::cdf(boost::math::students_t_distribution<double>(df), x);
}

double t_quantile(double p, double df) {
  if (!(df > 0.0)) throw ValidationError("t_quantile: degrees of freedom must be positive");
  if (std::isinf(df)) return norm_quantile(p);
  if (!(p > 0.0 && p < 1.0)) {
    throw ValidationError("t_quantile: probability must lie in (0, 1)");
  }
  return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

double bvn_cdf(double a, double b, double rho) {
  require_not_nan(a, "bvn_cdf");
  require_not_nan(b, "bvn_cdf");
  if (std::isnan(rho) || std::abs(rho) > 1.0 + kEntryTol) {
    throw ValidationError("bvn_cdf: correlation must lie in [-1, 1]");
  }
  rho = std::clamp(rho, -1.0, 1.0);
  if (a == -HUGE_VAL || b == -HUGE_VAL) return 0.0;
  if (a == HUGE_VAL) return norm_cdf(b);
  if (b == HUGE_VAL) return norm_cdf(a);
  if (rho == 0.0) return norm_cdf(a) * norm_cdf(b);
  if (rho == 1.0) return norm_cdf(std::min(a, b));
  if (rho == -1.0) return std::max(0.0, norm_cdf(a) - norm_sf(b));
  return std::clamp(bvn_upper(-a, -b, rho), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// CorrelationMatrix

CorrelationMatrix::CorrelationMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
  const auto n = values_.rows();
  if (n == 0 || values_.cols() != n) {
    throw ValidationError("correlation matrix must be square and non-empty");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = values_(i, j);
      if (!std::isfinite(v)) throw ValidationError("correlation matrix has non-finite entries");
      if (std::abs(v) > 1.0 + kEntryTol) {
        throw ValidationError("correlation entries must lie in [-1, 1]");
      }
      if (std::abs(v - values_(j, i)) > kEntryTol) {
        throw ValidationError("correlation matrix must be symmetric");
      }
    }
    if (std::abs(values_(i, i) - 1.0) > kEntryTol) {
      throw ValidationError("correlation matrix must have a unit diagonal");
    }
  }
  values_ = (0.5 * (values_ + values_.transpose())).cwiseMax(-1.0).cwiseMin(1.0);
  values_.diagonal().setOnes();

  Eigen::LLT<Eigen::MatrixXd> llt(values_);
  if (llt.info() == Eigen::Success) {
    factor_ = llt.matrixL();
    return;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(values_);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("correlation matrix eigendecomposition failed");
  }
  Eigen::VectorXd lambda = eig.eigenvalues();
  if (lambda.minCoeff() >= -kEigenFloor) {
    factor_ = eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();
    return;
  }
  std::clog << "warning: correlation matrix is not positive semi-definite (min eigenvalue "
            << lambda.minCoeff() << "); clipping eigenvalues at " << kEigenFloor << '\n';
  lambda = lambda.cwiseMax(kEigenFloor);
  Eigen::MatrixXd root = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
  const Eigen::VectorXd scale = root.rowwise().norm().cwiseInverse();
  factor_ = scale.asDiagonal() * root;
  values_ = factor_ * factor_.transpose();
  values_.diagonal().setOnes();
  repaired_ = true;
}

CorrelationMatrix::CorrelationMatrix(Eigen::MatrixXd values, Eigen::MatrixXd factor, Trusted)
    : values_(std::move(values)), factor_(std::move(factor)) {}

CorrelationMatrix CorrelationMatrix::from_loadings(Eigen::MatrixXd loadings) {
  if (loadings.rows() == 0 || loadings.cols() == 0) {
    throw ValidationError("loadings must be non-empty");
  }
  for (Eigen::Index i = 0; i < loadings.rows(); ++i) {
    if (std::abs(loadings.row(i).squaredNorm() - 1.0) > 1e-10) {
      throw ValidationError("loading rows must have unit norm");
    }
  }
  Eigen::MatrixXd values = loadings * loadings.transpose();
  values = values.cwiseMax(-1.0).cwiseMin(1.0);
  values.diagonal().setOnes();
  return CorrelationMatrix(std::move(values), std::move(loadings), Trusted{});
}

CorrelationMatrix CorrelationMatrix::identity(int dim) {
  if (dim <= 0) throw ValidationError("dimension must be positive");
  return CorrelationMatrix(Eigen::MatrixXd::Identity(dim, dim));
}

CorrelationMatrix CorrelationMatrix::equicorrelated(int dim, double rho) {
  if (dim <= 0) throw ValidationError("dimension must be positive");
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(dim, dim, rho);
  m.diagonal().setOnes();
  return CorrelationMatrix(std::move(m));
}

CorrelationMatrix CorrelationMatrix::pair(double rho) {
  return equicorrelated(2, rho);
}

bool CorrelationMatrix::is_identity() const {
  return values_.isIdentity(0.0);
}

CorrelationMatrix CorrelationMatrix::submatrix(std::span<const int> indices) const {
  const auto k = static_cast<Eigen::Index>(indices.size());
  if (k == 0) throw ValidationError("submatrix needs at least one index");
  Eigen::MatrixXd values(k, k);
  Eigen::MatrixXd factor(k, factor_.cols());
  for (Eigen::Index a = 0; a < k; ++a) {
    const int i = indices[static_cast<std::size_t>(a)];
    if (i < 0 || i >= dim()) throw ValidationError("submatrix index out of range");
    factor.row(a) = factor_.row(i);
    for (Eigen::Index b = 0; b < k; ++b) {
      values(a, b) = values_(i, indices[static_cast<std::size_t>(b)]);
    }
  }
  CorrelationMatrix sub(std::move(values), std::move(factor), Trusted{});
  sub.repaired_ = repaired_;
  return sub;
}

std::string_view to_string(ProbMethod method) {
  return method == ProbMethod::quadrature ? "quadrature" : "monte-carlo";
}

// ---------------------------------------------------------------------------
// mv_cdf

ProbEstimate mv_cdf(std::span<const double> upper, const CorrelationMatrix& corr, double df,
                    const MvOptions& options) {
  if (static_cast<int>(upper.size()) != corr.dim()) {
    throw ValidationError("mv_cdf: bound vector does not match the correlation dimension");
  }
  if (!(df > 0.0)) throw ValidationError("mv_cdf: degrees of freedom must be positive");
  if (!(options.abs_tol > 0.0)) throw ValidationError("mv_cdf: tolerance must be positive");

  std::vector<int> active;
  for (int i = 0; i < corr.dim(); ++i) {
    const double b = upper[static_cast<std::size_t>(i)];
    require_not_nan(b, "mv_cdf");
    if (b == -HUGE_VAL) return {0.0, 0.0, ProbMethod::quadrature};
    if (b != HUGE_VAL) active.push_back(i);
  }
  if (active.empty()) return {1.0, 0.0, ProbMethod::quadrature};

  const CorrelationMatrix sub = corr.submatrix(active);
  std::vector<double> bounds;
  bounds.reserve(active.size());
  for (const int i : active) bounds.push_back(upper[static_cast<std::size_t>(i)]);

  if (bounds.size() == 1) return {t_cdf(bounds[0], df), 0.0, ProbMethod::quadrature};
  if (sub.is_identity() && std::isinf(df)) {
    double p = 1.0;
    for (const double b : bounds) p *= norm_cdf(b);
    return {p, 0.0, ProbMethod::quadrature};
  }
  if (bounds.size() == 2 && std::isinf(df)) {
    return {bvn_cdf(bounds[0], bounds[1], sub(0, 1)), 0.0, ProbMethod::quadrature};
  }
  return detail::genz_cdf(bounds, sub.matrix(), df, options);
}

// ---------------------------------------------------------------------------
// Sampling

JointSampler::JointSampler(const CorrelationMatrix& corr, double df)
    : factor_(corr.factor()), df_(df) {
  if (!(df > 0.0)) throw ValidationError("degrees of freedom must be positive");
}

void JointSampler::fill_block(std::uint64_t seed, std::size_t block, std::size_t count,
                              Eigen::MatrixXd& out) const {
  std::mt19937_64 rng(mix_seed(seed, block));
  std::normal_distribution<double> normal;
  const auto k = factor_.cols();
  Eigen::MatrixXd z(k, static_cast<Eigen::Index>(count));
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(count));
  const bool student = std::isfinite(df_);
  std::chi_squared_distribution<double> chi2(student ? df_ : 1.0);
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(count); ++j) {
    for (Eigen::Index i = 0; i < k; ++i) z(i, j) = normal(rng);
    if (student) scale(j) = std::sqrt(df_ / chi2(rng));
  }
  out.noalias() = factor_ * z;
  if (student) out *= scale.asDiagonal();
}

DrawMatrix sample_joint(const CorrelationMatrix& corr, double df, std::size_t n_draws,
                        std::uint64_t seed, unsigned threads) {
  if (n_draws == 0) throw ValidationError("sample_joint: n_draws must be at least 1");
  const JointSampler sampler(corr, df);
  DrawMatrix draws(static_cast<Eigen::Index>(n_draws), sampler.dim());
  const std::size_t blocks = (n_draws + JointSampler::kBlockSize - 1) / JointSampler::kBlockSize;
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t first = b * JointSampler::kBlockSize;
    const std::size_t count = std::min(JointSampler::kBlockSize, n_draws - first);
    Eigen::MatrixXd block;
    sampler.fill_block(seed, b, count, block);
    draws.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count)) =
        block.transpose();
  });
  return draws;
}

}  // namespace pwer
