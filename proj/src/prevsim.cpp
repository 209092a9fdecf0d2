#include "pwer/prevsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

#include <boost/math/tools/toms748_solve.hpp>

#include "pwer/error.hpp"
#include "pwer/parallel.hpp"

namespace pwer {

namespace {

constexpr double kRootTol = 1e-10;

double union_sf(double c, double rho) { return 1.0 - bvn_cdf(c, c, rho); }

double solve_level(const std::function<double(double)>& pwer, double alpha) {
  double lo = 0.0;
  double hi = 15.0;
  const double f_lo = pwer(lo) - alpha;
  const double f_hi = pwer(hi) - alpha;
  if (f_lo <= 0.0 || f_hi > 0.0) throw NumericalError("estimated critical value not bracketed");
  std::uintmax_t iters = 200;
  const auto g = [&](double c) { return pwer(c) - alpha; };
  const auto tol = [](double a, double b) { return std::abs(b - a) <= kRootTol; };
  auto [a, b] = boost::math::tools::toms748_solve(g, lo, hi, f_lo, f_hi, tol, iters);
  double step = kRootTol;
  while (pwer(b) > alpha && b < hi) {
    b = std::min(hi, b + step);
    step *= 2.0;
  }
  return b;
}

}  // namespace

void TwoPopPrevalences::validate() const {
  if (!(only1 >= 0.0 && only2 >= 0.0 && both >= 0.0)) {
    throw ValidationError("prevalences must be non-negative");
  }
  if (std::abs(only1 + only2 + both - 1.0) > 1e-9) {
    throw ValidationError("prevalences must sum to 1");
  }
}

double true_pwer_at(double c, double rho, const TwoPopPrevalences& truth, bool testable1,
                    bool testable2) {
  const double single = norm_sf(c);
  double total = 0.0;
  if (testable1) total += truth.only1 * single;
  if (testable2) total += truth.only2 * single;
  if (testable1 && testable2) {
    total += truth.both * union_sf(c, rho);
  } else if (testable1 || testable2) {
    total += truth.both * single;
  }
  return total;
}

EstimatedCritical estimated_critical(const TwoPopCounts& counts, TwoPopKind kind, double alpha,
                                     std::optional<double> pi_min) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  const std::vector<StratumCount> strata{{subset_of({1}), counts.only1},
                                         {subset_of({2}), counts.only2},
                                         {subset_of({1, 2}), counts.both}};
  const PrevalenceEstimate mle = prevalence_mle(strata);

  EstimatedCritical out;
  out.estimate = {mle.estimates[0].prevalence, mle.estimates[1].prevalence,
                  mle.estimates[2].prevalence};
  // Only a missing overlap loses multiplicity, so only the overlap is
  // floored; the single-population strata give up the difference.
  if (pi_min && out.estimate.both < *pi_min) {
    const double scale = (1.0 - *pi_min) / (1.0 - out.estimate.both);
    out.estimate = {out.estimate.only1 * scale, out.estimate.only2 * scale, *pi_min};
  }
  out.testable1 = counts.only1 + counts.both > 0;
  out.testable2 = counts.only2 + counts.both > 0;
  const double n = static_cast<double>(counts.total());
  out.rho = two_pop_correlation(kind, counts.only1 / n, counts.only2 / n, counts.both / n);
  out.c_hat = solve_level(
      [&](double c) {
        return true_pwer_at(c, out.rho, out.estimate, out.testable1, out.testable2);
      },
      alpha);
  return out;
}

double actual_pwer_one_rep(const TwoPopCounts& counts, const TwoPopPrevalences& truth,
                           TwoPopKind kind, double alpha, std::optional<double> pi_min) {
  truth.validate();
  const EstimatedCritical est = estimated_critical(counts, kind, alpha, pi_min);
  return true_pwer_at(est.c_hat, est.rho, truth, est.testable1, est.testable2);
}

TwoPopCounts draw_counts(const TwoPopPrevalences& truth, std::uint64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TwoPopCounts counts;
  counts.only1 = std::binomial_distribution<std::uint64_t>(n, std::clamp(truth.only1, 0.0, 1.0))(rng);
  const std::uint64_t rest = n - counts.only1;
  const double remaining = truth.only2 + truth.both;
  const double p2 = remaining > 0.0 ? std::clamp(truth.only2 / remaining, 0.0, 1.0) : 0.0;
  counts.only2 = std::binomial_distribution<std::uint64_t>(rest, p2)(rng);
  counts.both = rest - counts.only2;
  return counts;
}

void PrevSimConfig::validate() const {
  if (n_total < 1) throw ValidationError("N must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (n_reps == 0) throw ValidationError("n_reps must be positive");
  if (grid_steps < 1) throw ValidationError("grid_steps must be positive");
  if (pi_min && !(*pi_min > 0.0 && *pi_min < 1.0)) {
    throw ValidationError("pi_min must lie in (0, 1)");
  }
  if (kind == TwoPopKind::independent_studies) {
    throw ValidationError("prevalence simulation needs scenario i or ii");
  }
}

nlohmann::json to_json(const PrevSimConfig& c) {
  nlohmann::json j{{"scenario", std::string(to_string(c.kind))},
                   {"N", c.n_total},
                   {"alpha", c.alpha},
                   {"n_reps", c.n_reps},
                   {"seed", c.seed},
                   {"grid_steps", c.grid_steps}};
  j["pi_min"] = c.pi_min ? nlohmann::json(*c.pi_min) : nlohmann::json(nullptr);
  return j;
}

PrevSimConfig prevsim_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("prev-sim config must be a JSON object");
  PrevSimConfig c;
  try {
    c.kind = two_pop_kind_from_string(j.value("scenario", std::string("i")));
    c.n_total = j.value("N", c.n_total);
    c.alpha = j.value("alpha", c.alpha);
    c.n_reps = j.value("n_reps", c.n_reps);
    c.seed = j.value("seed", c.seed);
    c.grid_steps = j.value("grid_steps", c.grid_steps);
    if (j.contains("pi_min") && !j.at("pi_min").is_null()) c.pi_min = j.at("pi_min").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("prev-sim config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<GridPoint> prevalence_effect_grid(const PrevSimConfig& config) {
  config.validate();
  const int steps = config.grid_steps;
  std::vector<GridPoint> grid;
  for (int i = 0; i <= steps; ++i) {
    for (int k = 0; k + i <= steps; ++k) {
      grid.push_back({static_cast<double>(i) / steps, static_cast<double>(k) / steps, 0.0, 0.0});
    }
  }
  parallel_for(grid.size(), config.threads, [&](std::size_t g) {
    GridPoint& point = grid[g];
    const TwoPopPrevalences truth{point.pi1, point.pi2,
                                  std::max(0.0, 1.0 - point.pi1 - point.pi2)};
    const std::uint64_t point_seed = mix_seed(config.seed, g);
    // c_hat and rho depend on the counts only.
    std::map<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>, EstimatedCritical> cache;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t rep = 0; rep < config.n_reps; ++rep) {
      const TwoPopCounts counts = draw_counts(truth, config.n_total, mix_seed(point_seed, rep));
      const auto key = std::make_tuple(counts.only1, counts.only2, counts.both);
      auto it = cache.find(key);
      if (it == cache.end()) {
        it = cache.emplace(key, estimated_critical(counts, config.kind, config.alpha,
                                                   config.pi_min))
                 .first;
      }
      const EstimatedCritical& est = it->second;
      const double v = true_pwer_at(est.c_hat, est.rho, truth, est.testable1, est.testable2);
      sum += v;
      sum_sq += v * v;
    }
    const double n = static_cast<double>(config.n_reps);
    point.mean_pwer = sum / n;
    const double var = std::max(0.0, sum_sq / n - point.mean_pwer * point.mean_pwer);
    point.mc_se = std::sqrt(var / n);
  });
  return grid;
}

std::string grid_csv(const std::vector<GridPoint>& grid) {
  std::ostringstream os;
  os << "pi1,pi2,mean_pwer,mc_se\n";
  char line[128];
  for (const auto& p : grid) {
    std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f,%.6f\n", p.pi1, p.pi2, p.mean_pwer, p.mc_se);
    os << line;
  }
  return os.str();
}

}  // namespace pwer
