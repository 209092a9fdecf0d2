#include "pwer/umbrella.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "pwer/ensemble.hpp"
#include "pwer/error.hpp"
#include "pwer/parallel.hpp"

namespace pwer {

namespace {

constexpr double kIntegerTol = 1e-9;

int zero_count(int l, double q) {
  const double lq = q * l;
  const double rounded = std::round(lq);
  if (std::abs(lq - rounded) > kIntegerTol) {
    throw ValidationError("q * l must be an integer");
  }
  return static_cast<int>(rounded);
}

double subset_mass(std::span<const double> pi, Subset s) {
  double total = 0.0;
  for (const int i : zero_based(s)) total += pi[static_cast<std::size_t>(i)];
  return total;
}

// Per-subset constants shared by all replications.
class TrialSimulator {
 public:
  TrialSimulator(const UmbrellaConfig& config, std::span<const double> theta)
      : config_(config),
        pi_(config.prevalences()),
        theta_(theta.begin(), theta.end()),
        sizes_(config.stratum_sizes()),
        n_subsets_((std::size_t{1} << config.l) - 1),
        var_factor_(n_subsets_ + 1, 0.0),
        mass_(n_subsets_ + 1, 0.0),
        effect_mass_(n_subsets_ + 1, 0.0),
        df_(0.0),
        chi2_(1.0) {
    int total = 0;
    for (const int n : sizes_) total += n;
    df_ = static_cast<double>(total - 2 * config.l);
    chi2_ = std::chi_squared_distribution<double>(df_);
    for (std::size_t s = 1; s <= n_subsets_; ++s) {
      const int i = std::countr_zero(static_cast<unsigned>(s));
      const std::size_t rest = s & (s - 1);
      const double p = pi_[static_cast<std::size_t>(i)];
      const double arm = sizes_[static_cast<std::size_t>(i)] / 2.0;
      var_factor_[s] = var_factor_[rest] + p * p * 2.0 / arm;
      mass_[s] = mass_[rest] + p;
      effect_mass_[s] = effect_mass_[rest] + p * theta_[static_cast<std::size_t>(i)];
    }
  }

  std::size_t subsets() const { return n_subsets_; }
  const std::vector<double>& pi() const { return pi_; }
  const std::vector<double>& theta() const { return theta_; }
  /// theta^S > 0
  bool alternative(std::size_t s) const { return effect_mass_[s] > 0.0; }
  double effect_mass(std::size_t s) const { return effect_mass_[s]; }
  double mass(std::size_t s) const { return mass_[s]; }

  // t[s - 1] = T^S
  void draw(std::mt19937_64& rng, std::vector<double>& t) {
    const int l = config_.l;
    numerator_.assign(n_subsets_ + 1, 0.0);
    std::array<double, kMaxUmbrellaStrata> diff{};
    for (int i = 0; i < l; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double arm_sd = config_.sigma / std::sqrt(sizes_[ui] / 2.0);
      const double treated = theta_[ui] + arm_sd * normal_(rng);
      const double control = arm_sd * normal_(rng);
      diff[ui] = treated - control;
    }
    const double s = config_.sigma * std::sqrt(chi2_(rng) / df_);
    t.resize(n_subsets_);
    for (std::size_t sub = 1; sub <= n_subsets_; ++sub) {
      const int i = std::countr_zero(static_cast<unsigned>(sub));
      numerator_[sub] = numerator_[sub & (sub - 1)] +
                        pi_[static_cast<std::size_t>(i)] * diff[static_cast<std::size_t>(i)];
      t[sub - 1] = numerator_[sub] / (s * std::sqrt(var_factor_[sub]));
    }
  }

 private:
  const UmbrellaConfig& config_;
  std::vector<double> pi_;
  std::vector<double> theta_;
  std::vector<int> sizes_;
  std::size_t n_subsets_;
  std::vector<double> var_factor_;
  std::vector<double> mass_;
  std::vector<double> effect_mass_;
  std::vector<double> numerator_;
  double df_;
  std::normal_distribution<double> normal_;
  std::chi_squared_distribution<double> chi2_;
};

struct Accumulator {
  // power, correct, false, rae numerator, selected, realized pwer, realized fwer
  static constexpr int kFields = 7;
  std::array<double, kFields> sum{};
  std::array<double, kFields> sum_sq{};

  void add(const std::array<double, kFields>& v) {
    for (int k = 0; k < kFields; ++k) {
      sum[static_cast<std::size_t>(k)] += v[static_cast<std::size_t>(k)];
      sum_sq[static_cast<std::size_t>(k)] += v[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(k)];
    }
  }
  void merge(const Accumulator& o) {
    for (int k = 0; k < kFields; ++k) {
      sum[static_cast<std::size_t>(k)] += o.sum[static_cast<std::size_t>(k)];
      sum_sq[static_cast<std::size_t>(k)] += o.sum_sq[static_cast<std::size_t>(k)];
    }
  }
  MeanEstimate mean(int k, double n, double scale = 1.0) const {
    const double m = sum[static_cast<std::size_t>(k)] / n;
    const double var = std::max(0.0, sum_sq[static_cast<std::size_t>(k)] / n - m * m);
    return {scale * m, scale * std::sqrt(var / n)};
  }
};

std::array<double, Accumulator::kFields> score(const TrialSimulator& sim,
                                               std::span<const double> t, double c,
                                               Subset selected) {
  std::array<double, Accumulator::kFields> v{};
  Subset affected = 0;
  bool any_true_rejected = false;
  for (std::size_t s = 1; s <= sim.subsets(); ++s) {
    if (!(t[s - 1] > c)) continue;
    if (sim.alternative(s)) {
      v[0] = 1.0;
    } else {
      any_true_rejected = true;
      affected |= static_cast<Subset>(s);
    }
  }
  if (selected != 0) {
    double positive = 0.0;
    double zero = 0.0;
    for (const int i : zero_based(selected)) {
      const auto ui = static_cast<std::size_t>(i);
      (sim.theta()[ui] > 0.0 ? positive : zero) += sim.pi()[ui];
    }
    const double total = positive + zero;
    v[1] = positive / total;
    v[2] = zero / total;
    v[3] = sim.effect_mass(selected);
    v[4] = 1.0;
  }
  for (const int i : zero_based(affected)) v[5] += sim.pi()[static_cast<std::size_t>(i)];
  v[6] = any_true_rejected ? 1.0 : 0.0;
  return v;
}

SimulationReport make_report(const UmbrellaConfig& config, Control control, double c,
                             const Accumulator& acc, std::size_t n_reps, std::uint64_t seed) {
  const double n = static_cast<double>(n_reps);
  SimulationReport r;
  r.control = control;
  r.critical_value = c;
  r.power = acc.mean(0, n);
  r.correct = acc.mean(1, n);
  r.false_fraction = acc.mean(2, n);
  const auto positives = config.l - zero_count(config.l, config.q);
  r.rae = (config.theta_overall > 0.0 && positives > 0)
              ? acc.mean(3, n, 100.0 / config.theta_overall)
              : MeanEstimate{};
  r.any_selected = acc.mean(4, n);
  r.realized_pwer = acc.mean(5, n);
  r.realized_fwer = acc.mean(6, n);
  r.n_reps = n_reps;
  r.seed = seed;
  r.config = config;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

void UmbrellaConfig::validate() const {
  if (l < 1 || l > kMaxUmbrellaStrata) {
    throw ValidationError("number of strata must lie in 1.." + std::to_string(kMaxUmbrellaStrata));
  }
  if (!pi.empty()) {
    if (static_cast<int>(pi.size()) != l) throw ValidationError("need one prevalence per stratum");
    double total = 0.0;
    for (const double p : pi) {
      if (!(p > 0.0)) throw ValidationError("stratum prevalences must be positive");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("stratum prevalences must sum to 1");
  }
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("q must lie in [0, 1]");
  const int zeros = zero_count(l, q);
  if (!(tau >= 0.0 && tau < 1.0)) throw ValidationError("tau must lie in [0, 1)");
  if (tau > 0.0 && l - zeros <= 1) {
    throw ValidationError("tau must be 0 when at most one effect is positive");
  }
  if (!(theta_overall >= 0.0) || !std::isfinite(theta_overall)) {
    throw ValidationError("theta_overall must be finite and non-negative");
  }
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  const auto p = prevalences();
  int total = 0;
  for (int i = 0; i < l; ++i) {
    const double n_i = n_total * p[static_cast<std::size_t>(i)];
    const int even = 2 * static_cast<int>(std::lround(n_i / 2.0));
    if (even < 2) throw ValidationError("each stratum needs at least one patient per arm");
    total += even;
  }
  if (total - 2 * l < 1) throw ValidationError("sample size leaves no residual degrees of freedom");
}

std::vector<double> UmbrellaConfig::prevalences() const {
  if (!pi.empty()) return pi;
  return std::vector<double>(static_cast<std::size_t>(std::max(l, 1)), 1.0 / std::max(l, 1));
}

double UmbrellaConfig::df() const {
  int total = 0;
  for (const int n : stratum_sizes()) total += n;
  return static_cast<double>(total - 2 * l);
}

std::vector<int> UmbrellaConfig::stratum_sizes() const {
  std::vector<int> sizes;
  for (const double p : prevalences()) {
    sizes.push_back(2 * static_cast<int>(std::lround(n_total * p / 2.0)));
  }
  return sizes;
}

nlohmann::json to_json(const UmbrellaConfig& c) {
  return {{"l", c.l},         {"N", c.n_total},     {"pi", c.prevalences()},
          {"q", c.q},         {"tau", c.tau},       {"theta_overall", c.theta_overall},
          {"sigma", c.sigma}, {"alpha", c.alpha}};
}

UmbrellaConfig umbrella_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("umbrella config must be a JSON object");
  UmbrellaConfig c;
  try {
    c.l = j.at("l").get<int>();
    c.n_total = j.value("N", c.n_total);
    if (j.contains("pi")) c.pi = j.at("pi").get<std::vector<double>>();
    c.q = j.value("q", c.q);
    c.tau = j.value("tau", c.tau);
    c.theta_overall = j.value("theta_overall", c.theta_overall);
    c.sigma = j.value("sigma", c.sigma);
    c.alpha = j.value("alpha", c.alpha);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("umbrella config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<double> theta_grid(int l, double q, double tau, double theta_overall) {
  if (l < 1) throw ValidationError("l must be positive");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("q must lie in [0, 1]");
  const int zeros = zero_count(l, q);
  const int positives = l - zeros;
  if (!(tau >= 0.0 && tau < 1.0)) throw ValidationError("tau must lie in [0, 1)");
  if (tau > 0.0 && positives <= 1) {
    throw ValidationError("tau must be 0 when at most one effect is positive");
  }
  std::vector<double> theta(static_cast<std::size_t>(l), 0.0);
  const double lo = theta_overall * (1.0 - tau);
  const double hi = theta_overall * (1.0 + tau);
  for (int k = 0; k < positives; ++k) {
    theta[static_cast<std::size_t>(zeros + k)] =
        positives == 1 ? theta_overall : lo + (hi - lo) * k / (positives - 1);
  }
  return theta;
}

double subset_effect(std::span<const double> theta, std::span<const double> pi, Subset s) {
  if (s == 0) throw ValidationError("subset must be non-empty");
  if (theta.size() != pi.size()) throw ValidationError("theta and pi differ in length");
  if (static_cast<std::size_t>(std::bit_width(s)) > pi.size()) {
    throw ValidationError("subset refers to a stratum beyond l");
  }
  double num = 0.0;
  for (const int i : zero_based(s)) {
    num += pi[static_cast<std::size_t>(i)] * theta[static_cast<std::size_t>(i)];
  }
  return num / subset_mass(pi, s);
}

double subset_corr(std::span<const double> pi, Subset s, Subset t) {
  if (s == 0 || t == 0) throw ValidationError("subsets must be non-empty");
  return subset_mass(pi, s & t) / std::sqrt(subset_mass(pi, s) * subset_mass(pi, t));
}

CorrelationMatrix subset_correlation_matrix(std::span<const double> pi) {
  const int l = static_cast<int>(pi.size());
  if (l < 1 || l > kMaxUmbrellaStrata) throw ValidationError("unsupported number of strata");
  const auto n = static_cast<Eigen::Index>((1u << l) - 1);
  Eigen::MatrixXd loadings = Eigen::MatrixXd::Zero(n, l);
  for (Eigen::Index s = 1; s <= n; ++s) {
    const double mass = subset_mass(pi, static_cast<Subset>(s));
    for (const int i : zero_based(static_cast<Subset>(s))) {
      loadings(s - 1, i) = std::sqrt(pi[static_cast<std::size_t>(i)] / mass);
    }
  }
  return CorrelationMatrix::from_loadings(std::move(loadings));
}

UmbrellaCriticals umbrella_criticals(const UmbrellaConfig& config,
                                     const CriticalOptions& options) {
  config.validate();
  const double df = config.df();
  if (config.l == 1) {
    const double c = t_quantile(1.0 - config.alpha, df);
    return {c, c, 0.0, 0.0};
  }
  const auto pi = config.prevalences();
  const CorrelationMatrix corr = subset_correlation_matrix(pi);
  const std::size_t n_subsets = (std::size_t{1} << config.l) - 1;

  // Groups 0..l-1: subsets containing stratum i; group l: all subsets.
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(config.l) + 1);
  for (std::size_t s = 1; s <= n_subsets; ++s) {
    for (const int i : zero_based(static_cast<Subset>(s))) {
      groups[static_cast<std::size_t>(i)].push_back(static_cast<int>(s - 1));
    }
    groups.back().push_back(static_cast<int>(s - 1));
  }
  const ExceedanceEnsemble ensemble(corr, df, std::move(groups), {}, options.draws, options.seed,
                                    options.threads);

  std::vector<double> pwer_weights(pi.begin(), pi.end());
  pwer_weights.push_back(0.0);
  std::vector<double> fwer_weights(pi.size(), 0.0);
  fwer_weights.push_back(1.0);

  // Smallest c with rate(c) <= alpha: the step function only changes at
  // stored maxima, so bisection on c converges to a stored value.
  const auto smallest = [&](const std::vector<double>& w) {
    const ExceedanceCurve curve(ensemble, w);
    double lo = 0.0;
    double hi = 15.0;
    if (curve(lo) <= config.alpha || curve(hi) > config.alpha) {
      throw NumericalError("umbrella critical value not bracketed in [0, 15]");
    }
    while (hi - lo > 1e-9) {
      const double mid = 0.5 * (lo + hi);
      (curve(mid) > config.alpha ? lo : hi) = mid;
    }
    return hi;
  };
  UmbrellaCriticals out;
  out.c_pwer = smallest(pwer_weights);
  out.c_fwer = smallest(fwer_weights);
  out.pwer_abs_error = 3.0 * ensemble.standard_error(out.c_pwer, pwer_weights);
  out.fwer_abs_error = 3.0 * ensemble.standard_error(out.c_fwer, fwer_weights);
  return out;
}

double fwer_critical(const UmbrellaConfig& config, const CriticalOptions& options) {
  return umbrella_criticals(config, options).c_fwer;
}

double pwer_critical(const UmbrellaConfig& config, const CriticalOptions& options) {
  return umbrella_criticals(config, options).c_pwer;
}

Subset select_subset(std::span<const double> t_stats, double c) {
  if (t_stats.empty()) return 0;
  std::size_t best = 0;
  for (std::size_t k = 1; k < t_stats.size(); ++k) {
    if (t_stats[k] > t_stats[best]) best = k;
  }
  return t_stats[best] > c ? static_cast<Subset>(best + 1) : 0;
}

std::string_view to_string(Control control) {
  return control == Control::pwer ? "pwer" : "fwer";
}

Control control_from_string(std::string_view s) {
  if (s == "pwer") return Control::pwer;
  if (s == "fwer") return Control::fwer;
  throw ValidationError("control must be pwer or fwer");
}

std::vector<double> simulate_t_stats(const UmbrellaConfig& config, std::span<const double> theta,
                                     std::uint64_t seed) {
  config.validate();
  if (static_cast<int>(theta.size()) != config.l) throw ValidationError("need one effect per stratum");
  TrialSimulator sim(config, theta);
  std::mt19937_64 rng(seed);
  std::vector<double> t;
  sim.draw(rng, t);
  return t;
}

TrialOutcome evaluate_trial(std::span<const double> t_stats, double c) {
  TrialOutcome out;
  out.t_stats.assign(t_stats.begin(), t_stats.end());
  out.selected = select_subset(t_stats, c);
  for (std::size_t k = 0; k < t_stats.size(); ++k) {
    if (t_stats[k] > c) out.rejected.push_back(static_cast<Subset>(k + 1));
  }
  return out;
}

nlohmann::json to_json(const SimulationReport& r) {
  const auto pair = [](const MeanEstimate& e) {
    return nlohmann::json::array({e.estimate, e.standard_error});
  };
  return {{"config", to_json(r.config)},
          {"control", std::string(to_string(r.control))},
          {"critical_value", r.critical_value},
          {"n_reps", r.n_reps},
          {"power", pair(r.power)},
          {"correct", pair(r.correct)},
          {"false", pair(r.false_fraction)},
          {"rae", pair(r.rae)},
          {"selected", pair(r.any_selected)},
          {"realized_pwer", pair(r.realized_pwer)},
          {"realized_fwer", pair(r.realized_fwer)},
          {"seed", r.seed}};
}

PairedReport simulate_pair(const UmbrellaConfig& config, const UmbrellaCriticals& criticals,
                           std::size_t n_reps, std::uint64_t seed, unsigned threads) {
  config.validate();
  if (n_reps == 0) throw ValidationError("simulation needs at least one replication");
  const auto theta = theta_grid(config.l, config.q, config.tau, config.theta_overall);

  constexpr std::size_t kChunk = 1024;
  const std::size_t chunks = (n_reps + kChunk - 1) / kChunk;
  std::vector<Accumulator> acc_pwer(chunks);
  std::vector<Accumulator> acc_fwer(chunks);
  std::vector<std::size_t> violations(chunks, 0);
  parallel_for(chunks, threads, [&](std::size_t chunk) {
    TrialSimulator sim(config, theta);
    std::vector<double> t;
    const std::size_t end = std::min(n_reps, (chunk + 1) * kChunk);
    for (std::size_t rep = chunk * kChunk; rep < end; ++rep) {
      std::mt19937_64 rng(mix_seed(seed, rep));
      sim.draw(rng, t);
      const Subset sel_p = select_subset(t, criticals.c_pwer);
      const Subset sel_f = select_subset(t, criticals.c_fwer);
      if (sel_f != 0 && sel_p != sel_f) ++violations[chunk];
      acc_pwer[chunk].add(score(sim, t, criticals.c_pwer, sel_p));
      acc_fwer[chunk].add(score(sim, t, criticals.c_fwer, sel_f));
    }
  });
  Accumulator total_p;
  Accumulator total_f;
  PairedReport out;
  for (std::size_t k = 0; k < chunks; ++k) {
    total_p.merge(acc_pwer[k]);
    total_f.merge(acc_fwer[k]);
    out.dominance_violations += violations[k];
  }
  out.pwer = make_report(config, Control::pwer, criticals.c_pwer, total_p, n_reps, seed);
  out.fwer = make_report(config, Control::fwer, criticals.c_fwer, total_f, n_reps, seed);
  return out;
}

SimulationReport simulate(const UmbrellaConfig& config, Control control, std::size_t n_reps,
                          std::uint64_t seed, const CriticalOptions& options) {
  const UmbrellaCriticals c = umbrella_criticals(config, options);
  const PairedReport both = simulate_pair(config, c, n_reps, seed, options.threads);
  return control == Control::pwer ? both.pwer : both.fwer;
}

}  // namespace pwer
