#include "pwer/pwer_core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <boost/math/tools/toms748_solve.hpp>

#include "pwer/ensemble.hpp"
#include "pwer/error.hpp"
#include "pwer/parallel.hpp"

namespace pwer {

namespace {

constexpr double kPrunePrevalence = 1e-15;

bool union_is_deterministic(const CorrelationModel& corr, std::span<const int> idx) {
  if (idx.size() <= 1) return true;
  if (!std::isinf(corr.df)) return false;
  if (idx.size() == 2) return true;
  return corr.matrix.submatrix(idx).is_identity();
}

// P(some X_i > t_i, i in idx) = 1 - P(X_idx <= t_idx).
ProbEstimate union_exceedance(const CorrelationModel& corr, std::span<const int> idx,
                              std::span<const double> thresholds, const MvOptions& options) {
  std::vector<double> bounds;
  bounds.reserve(idx.size());
  for (const int i : idx) bounds.push_back(thresholds[static_cast<std::size_t>(i)]);
  const ProbEstimate inside = mv_cdf(bounds, corr.matrix.submatrix(idx), corr.df, options);
  return {std::clamp(1.0 - inside.value, 0.0, 1.0), inside.abs_error, inside.method};
}

void check_thresholds(const PwerProblem& problem, std::span<const double> thresholds) {
  if (static_cast<int>(thresholds.size()) != problem.m()) {
    throw ValidationError("threshold vector does not match the number of hypotheses");
  }
  for (const double t : thresholds) {
    if (std::isnan(t)) throw ValidationError("thresholds must not be NaN");
  }
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
}

struct RootResult {
  double c = 0.0;
  double level = 0.0;
  std::size_t iterations = 0;
  std::pair<double, double> bracket;
};

// Smallest c with f(c) <= alpha for a non-increasing f. The bracket [a, b]
// keeps f(a) > alpha >= f(b); the returned point is b.
RootResult solve_decreasing(const std::function<double(double)>& f, double alpha,
                            const SolverOptions& options) {
  double lo = options.lower;
  double hi = options.upper;
  if (!(lo < hi)) throw ValidationError("solver bracket must satisfy lower < upper");
  const double f_lo = f(lo) - alpha;
  const double f_hi = f(hi) - alpha;
  if (f_lo <= 0.0 || f_hi > 0.0) {
    throw NumericalError("no critical value bracketed in [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + "]");
  }
  std::uintmax_t max_iter = 400;
  const auto tol = [&](double a, double b) { return std::abs(b - a) <= options.c_tol; };
  const auto g = [&](double c) { return f(c) - alpha; };
  auto [a, b] = boost::math::tools::toms748_solve(g, lo, hi, f_lo, f_hi, tol, max_iter);
  // toms748 may return a zero at either end; restore f(a) > alpha >= f(b).
  double fb = f(b);
  if (fb > alpha) {
    double step = options.c_tol;
    while (fb > alpha && b < hi) {
      a = b;
      b = std::min(hi, b + step);
      step *= 2.0;
      fb = f(b);
    }
  }
  return {b, fb, static_cast<std::size_t>(max_iter), {a, b}};
}

std::vector<int> true_null_indices(const PwerProblem& problem) {
  return zero_based(problem.true_nulls());
}

}  // namespace

// ---------------------------------------------------------------------------

PwerProblem::PwerProblem(PopulationStructure structure, CorrelationModel corr,
                         std::optional<Subset> true_nulls, std::vector<double> weights)
    : structure_(std::move(structure)), corr_(std::move(corr)), weights_(std::move(weights)) {
  const int m = structure_.m();
  if (corr_.matrix.dim() != m) {
    throw ValidationError("correlation dimension does not match the number of hypotheses");
  }
  if (!(corr_.df > 0.0)) throw ValidationError("degrees of freedom must be positive");
  const Subset all = structure_.hypotheses_affecting(~Subset{0});
  true_nulls_ = true_nulls.value_or(all);
  if ((true_nulls_ & ~all) != 0) throw ValidationError("true null index out of range");
  if (true_nulls_ == 0) throw ValidationError("true null set must be non-empty");
  if (weights_.empty()) weights_.assign(static_cast<std::size_t>(m), 1.0);
  if (static_cast<int>(weights_.size()) != m) {
    throw ValidationError("weight vector does not match the number of hypotheses");
  }
  for (const double w : weights_) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("weights must be positive");
  }
  for (const auto& s : structure_.strata()) {
    const Subset hit = s.subset & true_nulls_;
    if (hit == 0 || s.prevalence < kPrunePrevalence) continue;
    error_strata_.emplace_back(s.prevalence, zero_based(hit));
  }
}

std::vector<double> PwerProblem::thresholds(double c) const {
  std::vector<double> t(weights_.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = weights_[i] * c;
  return t;
}

bool PwerProblem::deterministic() const {
  return std::all_of(error_strata_.begin(), error_strata_.end(),
                     [&](const auto& s) { return union_is_deterministic(corr_, s.second); });
}

ProbEstimate evaluate_pwer(const PwerProblem& problem, std::span<const double> thresholds,
                           const MvOptions& options) {
  check_thresholds(problem, thresholds);
  ProbEstimate total{0.0, 0.0, ProbMethod::quadrature};
  for (const auto& [pi, idx] : problem.error_strata()) {
    const ProbEstimate u = union_exceedance(problem.corr(), idx, thresholds, options);
    total.value += pi * u.value;
    total.abs_error += pi * u.abs_error;
    if (u.method == ProbMethod::monte_carlo) total.method = ProbMethod::monte_carlo;
  }
  total.value = std::clamp(total.value, 0.0, 1.0);
  return total;
}

ProbEstimate evaluate_fwer(const PwerProblem& problem, std::span<const double> thresholds,
                           const MvOptions& options) {
  check_thresholds(problem, thresholds);
  return union_exceedance(problem.corr(), true_null_indices(problem), thresholds, options);
}

double pwer_at(const PwerProblem& problem, double c, const MvOptions& options) {
  return evaluate_pwer(problem, problem.thresholds(c), options).value;
}

double fwer_at(const PwerProblem& problem, double c, const MvOptions& options) {
  return evaluate_fwer(problem, problem.thresholds(c), options).value;
}

std::string_view to_string(Backend backend) {
  switch (backend) {
    case Backend::automatic: return "automatic";
    case Backend::deterministic: return "deterministic";
    case Backend::monte_carlo: return "monte-carlo";
  }
  return "unknown";
}

namespace {

// Shared driver for PWER and FWER solves. `groups` are the unions, `group
// weights` their prevalences (a single weight-1 group for the FWER).
CriticalValueResult solve_unions(const PwerProblem& problem, double alpha,
                                 const SolverOptions& options,
                                 const std::vector<std::pair<double, std::vector<int>>>& unions) {
  check_alpha(alpha);
  const bool exact = std::all_of(unions.begin(), unions.end(), [&](const auto& u) {
    return union_is_deterministic(problem.corr(), u.second);
  });
  Backend backend = options.backend;
  if (backend == Backend::automatic) {
    backend = exact ? Backend::deterministic : Backend::monte_carlo;
  }
  if (backend == Backend::deterministic && !exact) {
    throw ValidationError(
        "deterministic backend needs unions of at most two normal statistics");
  }

  CriticalValueResult result;
  result.backend = backend;
  if (backend == Backend::deterministic) {
    const auto f = [&](double c) {
      const auto t = problem.thresholds(c);
      double total = 0.0;
      for (const auto& [pi, idx] : unions) total += pi * union_exceedance(problem.corr(), idx, t, {}).value;
      return total;
    };
    const RootResult r = solve_decreasing(f, alpha, options);
    result.c_star = r.c;
    result.achieved_level = r.level;
    result.iterations = r.iterations;
    result.bracket = r.bracket;
    return result;
  }

  std::vector<std::vector<int>> groups;
  std::vector<double> weights;
  for (const auto& [pi, idx] : unions) {
    groups.push_back(idx);
    weights.push_back(pi);
  }
  const ExceedanceEnsemble ensemble(problem.corr().matrix, problem.corr().df, std::move(groups),
                                    problem.weights(), options.mc_draws, options.seed,
                                    options.threads);
  const ExceedanceCurve curve(ensemble, weights);
  const RootResult r = solve_decreasing([&](double c) { return curve(c); }, alpha, options);
  result.c_star = r.c;
  result.achieved_level = r.level;
  result.abs_error = 3.0 * ensemble.standard_error(r.c, weights);
  result.iterations = r.iterations;
  result.bracket = r.bracket;
  return result;
}

}  // namespace

CriticalValueResult solve_critical(const PwerProblem& problem, double alpha,
                                   const SolverOptions& options) {
  return solve_unions(problem, alpha, options, problem.error_strata());
}

CriticalValueResult solve_fwer_critical(const PwerProblem& problem, double alpha,
                                        const SolverOptions& options) {
  return solve_unions(problem, alpha, options, {{1.0, true_null_indices(problem)}});
}

double closed_form_independent_pair(double alpha, double pi12) {
  check_alpha(alpha);
  if (!(pi12 > 0.0 && pi12 <= 1.0)) {
    throw ValidationError("overlap prevalence must lie in (0, 1]; use norm_quantile(1 - alpha) at 0");
  }
  const double a = 1.0 - pi12;
  // Root of pi12 y^2 + (1 - pi12) y - (1 - alpha) = 0 in (0, 1), written
  // without cancellation for small pi12.
  const double disc = std::sqrt(a * a + 4.0 * pi12 * (1.0 - alpha));
  const double y = 2.0 * (1.0 - alpha) / (a + disc);
  return norm_quantile(y);
}

std::vector<double> adjusted_p(const PwerProblem& problem, std::span<const double> z_obs,
                               const MvOptions& options) {
  if (static_cast<int>(z_obs.size()) != problem.m()) {
    throw ValidationError("observation vector does not match the number of hypotheses");
  }
  std::vector<double> p;
  p.reserve(z_obs.size());
  for (std::size_t j = 0; j < z_obs.size(); ++j) {
    if (std::isnan(z_obs[j])) throw ValidationError("observed statistics must not be NaN");
    p.push_back(pwer_at(problem, z_obs[j] / problem.weights()[j], options));
  }
  return p;
}

std::string_view to_string(Side side) {
  switch (side) {
    case Side::lower: return "lower";
    case Side::upper: return "upper";
    case Side::two_sided: return "two-sided";
  }
  return "unknown";
}

Side side_from_string(std::string_view s) {
  if (s == "lower") return Side::lower;
  if (s == "upper") return Side::upper;
  if (s == "two-sided" || s == "two_sided" || s == "both") return Side::two_sided;
  throw ValidationError("side must be lower, upper or two-sided");
}

SciResult sci_bounds(std::span<const double> estimates, std::span<const double> ses,
                     double c_star, Side side) {
  if (estimates.size() != ses.size()) {
    throw ValidationError("estimates and standard errors differ in length");
  }
  if (!std::isfinite(c_star)) throw ValidationError("critical value must be finite");
  SciResult out;
  out.c_star = c_star;
  out.side = side;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (!(ses[i] > 0.0) || !std::isfinite(ses[i])) {
      throw ValidationError("standard errors must be positive");
    }
    const double half = c_star * ses[i];
    out.lower.push_back(side == Side::upper ? -HUGE_VAL : estimates[i] - half);
    out.upper.push_back(side == Side::lower ? HUGE_VAL : estimates[i] + half);
  }
  return out;
}

CoverageEstimate coverage_sim(const PwerProblem& problem, double c_star, Side side,
                              std::size_t n_reps, std::uint64_t seed, unsigned threads) {
  if (n_reps == 0) throw ValidationError("coverage_sim needs at least one replication");
  const int m = problem.m();
  const DrawMatrix z =
      sample_joint(problem.corr().matrix, problem.corr().df, n_reps, seed, threads);

  // Arbitrary true parameters and standard errors; pivotality makes the
  // coverage independent of them.
  std::vector<double> theta(static_cast<std::size_t>(m));
  std::vector<double> se(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    theta[static_cast<std::size_t>(j)] = 0.25 * j - 0.1;
    se[static_cast<std::size_t>(j)] = 0.5 + 0.2 * j;
  }

  CoverageEstimate out;
  out.n_reps = n_reps;
  double sum = 0.0;
  double sum_sq = 0.0;
  std::vector<double> est(static_cast<std::size_t>(m));
  std::vector<bool> covered(static_cast<std::size_t>(m));
  for (std::size_t r = 0; r < n_reps; ++r) {
    for (int j = 0; j < m; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      est[uj] = theta[uj] + se[uj] * z(static_cast<Eigen::Index>(r), j);
    }
    const SciResult b = sci_bounds(est, se, c_star, side);
    for (int j = 0; j < m; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      covered[uj] = b.lower[uj] <= theta[uj] && theta[uj] <= b.upper[uj];
      const double stat = (est[uj] - theta[uj]) / se[uj];
      bool rejects = false;
      if (side != Side::upper) rejects = rejects || stat > c_star;
      if (side != Side::lower) rejects = rejects || -stat > c_star;
      if (rejects == covered[uj]) ++out.duality_violations;
    }
    double f = 0.0;
    for (const auto& s : problem.structure().strata()) {
      bool all = true;
      for (const int j : zero_based(s.subset)) all = all && covered[static_cast<std::size_t>(j)];
      if (all) f += s.prevalence;
    }
    sum += f;
    sum_sq += f * f;
  }
  const double n = static_cast<double>(n_reps);
  out.coverage = sum / n;
  out.standard_error = std::sqrt(std::max(0.0, sum_sq / n - out.coverage * out.coverage) / n);
  return out;
}

}  // namespace pwer
