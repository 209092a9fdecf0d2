#include "pwer/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pwer/design_two_pop.hpp"
#include "pwer/error.hpp"
#include "pwer/parallel.hpp"
#include "pwer/prevsim.hpp"
#include "pwer/pwer_core.hpp"
#include "pwer/umbrella.hpp"

namespace pwer {

namespace {

using nlohmann::json;

double r6(double x) {
  if (!std::isfinite(x)) return x;
  return std::round(x * 1e6) / 1e6;
}

json r6_array(std::span<const double> xs) {
  json a = json::array();
  for (const double x : xs) {
    if (std::isfinite(x)) {
      a.push_back(r6(x));
    } else {
      a.push_back(nullptr);
    }
  }
  return a;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("invalid JSON in " + path + ": " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Globals {
  std::string out_path;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::optional<double> tol;
};

// Structure and correlation shared by crit, adjust-p and sci.
struct ProblemArgs {
  std::string structure_file;
  std::string corr_file;
  std::string scenario;
  std::optional<double> pi12;
  std::optional<double> df;
  std::vector<double> weights;
  std::string backend = "auto";
  std::size_t draws = 1'000'000;
  double alpha = 0.025;

  void attach(CLI::App* sub) {
    sub->add_option("--structure", structure_file, "population structure JSON file");
    sub->add_option("--corr-file", corr_file, "correlation matrix JSON file");
    sub->add_option("--scenario", scenario, "two-population scenario: i, ii or indep");
    sub->add_option("--pi12", pi12, "overlap prevalence for --scenario");
    sub->add_option("--df", df, "degrees of freedom (multivariate t) for --corr-file");
    sub->add_option("--weights", weights, "per-hypothesis threshold weights")->delimiter(',');
    sub->add_option("--backend", backend, "auto, deterministic or mc");
    sub->add_option("--draws", draws, "ensemble size for the Monte Carlo backend");
    sub->add_option("--alpha", alpha, "PWER level");
  }

  PwerProblem build(json& config) const {
    std::optional<PopulationStructure> structure;
    if (!structure_file.empty()) structure = structure_from_json(read_json_file(structure_file));
    CorrelationModel corr{CorrelationMatrix::identity(1), kInfiniteDf};
    if (!scenario.empty()) {
      if (!corr_file.empty()) throw ValidationError("use either --scenario or --corr-file");
      if (!pi12) throw ValidationError("--scenario needs --pi12");
      const TwoPopScenario sc{two_pop_kind_from_string(scenario), *pi12, alpha, 0.2};
      sc.validate();
      if (!structure) {
        const double rest = sc.pi_complement();
        structure = two_pop_structure(rest, rest, *pi12);
        corr.matrix = CorrelationMatrix::pair(scenario_correlation(sc));
      } else {
        if (structure->m() != 2) throw ValidationError("--scenario needs a two-hypothesis structure");
        double only[3] = {0.0, 0.0, 0.0};
        for (const auto& s : structure->strata()) only[s.subset - 1] = s.prevalence;
        corr.matrix =
            CorrelationMatrix::pair(two_pop_correlation(sc.kind, only[0], only[1], only[2]));
      }
      config["scenario"] = scenario;
      config["pi12"] = *pi12;
    } else {
      if (corr_file.empty()) throw ValidationError("need --corr-file or --scenario");
      if (!structure) throw ValidationError("--corr-file needs --structure");
      json cj = read_json_file(corr_file);
      json values = cj.is_object() ? cj.value("matrix", json()) : cj;
      if (!values.is_array()) throw ValidationError("correlation file needs a matrix");
      const auto n = static_cast<Eigen::Index>(values.size());
      Eigen::MatrixXd m(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const json& row = values[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) {
          throw ValidationError("correlation matrix must be square");
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const json& v = row[static_cast<std::size_t>(k)];
          if (!v.is_number()) throw ValidationError("correlation entries must be numbers");
          m(i, k) = v.get<double>();
        }
      }
      corr.matrix = CorrelationMatrix(std::move(m));
      if (cj.is_object() && cj.contains("df") && !cj["df"].is_null()) corr.df = cj["df"].get<double>();
      if (df) corr.df = *df;
      config["correlation"] = corr.matrix.dim() > 0 ? values : json::array();
      config["df"] = std::isinf(corr.df) ? json(nullptr) : json(corr.df);
    }
    config["structure"] = to_json(*structure);
    config["alpha"] = alpha;
    if (!weights.empty()) config["weights"] = weights;
    return PwerProblem(*structure, corr, std::nullopt, weights);
  }

  SolverOptions solver(const PwerProblem& problem, const Globals& g, json& config) const {
    SolverOptions o;
    if (backend == "auto") {
      o.backend = Backend::automatic;
    } else if (backend == "deterministic") {
      o.backend = Backend::deterministic;
    } else if (backend == "mc") {
      o.backend = Backend::monte_carlo;
    } else {
      throw ValidationError("--backend must be auto, deterministic or mc");
    }
    const bool stochastic =
        o.backend == Backend::monte_carlo || (o.backend == Backend::automatic && !problem.deterministic());
    if (stochastic) {
      if (!g.seed) throw ValidationError("--seed is required for Monte Carlo evaluation");
      o.seed = *g.seed;
      config["seed"] = *g.seed;
      config["draws"] = draws;
    }
    o.mc_draws = draws;
    o.threads = g.threads;
    if (g.tol) o.c_tol = *g.tol;
    config["backend"] = backend;
    config["tol"] = o.c_tol;
    return o;
  }
};

json critical_json(const CriticalValueResult& r, const PwerProblem& problem) {
  return {{"c_star", r6(r.c_star)},
          {"achieved_level", r6(r.achieved_level)},
          {"abs_error", r6(r.abs_error)},
          {"iterations", r.iterations},
          {"bracket", {r6(r.bracket.first), r6(r.bracket.second)}},
          {"backend", std::string(to_string(r.backend))},
          {"thresholds", r6_array(problem.thresholds(r.c_star))}};
}

json estimate_json(const MeanEstimate& e) { return {r6(e.estimate), r6(e.standard_error)}; }

json report_json(const SimulationReport& r) {
  json j = to_json(r);
  j["critical_value"] = r6(r.critical_value);
  for (const char* key : {"power", "correct", "false", "selected", "realized_pwer", "realized_fwer"}) {
    j[key] = {r6(j[key][0].get<double>()), r6(j[key][1].get<double>())};
  }
  j["rae"] = estimate_json(r.rae);
  return j;
}

class Runner {
 public:
  Runner(std::vector<std::string> args, std::ostream& out) : args_(std::move(args)), out_(out) {}

  void emit(const std::string& subcommand, const std::string& content, const json& config) {
    if (globals.out_path.empty()) {
      out_ << content;
      return;
    }
    {
      std::ofstream f(globals.out_path, std::ios::binary);
      if (!f) throw ValidationError("cannot write " + globals.out_path);
      f << content;
    }
    json manifest{{"subcommand", subcommand},
                  {"config", config},
                  {"seed", globals.seed ? json(*globals.seed) : json(nullptr)},
                  {"version", std::string(kToolVersion)},
                  {"arguments", args_},
                  {"output", globals.out_path},
                  {"checksum", "fnv1a64:" + hex64(fnv1a(content))}};
    std::ofstream m(globals.out_path + ".manifest.json", std::ios::binary);
    if (!m) throw ValidationError("cannot write manifest for " + globals.out_path);
    m << manifest.dump(2) << '\n';
  }

  Globals globals;

 private:
  std::vector<std::string> args_;
  std::ostream& out_;
};

std::uint64_t require_seed(const Globals& g, const json& config, const char* subcommand) {
  if (g.seed) return *g.seed;
  if (config.is_object() && config.contains("seed") && config["seed"].is_number_unsigned()) {
    return config["seed"].get<std::uint64_t>();
  }
  throw ValidationError(std::string(subcommand) + " needs --seed");
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Runner runner(args, out);
  Globals& g = runner.globals;

  CLI::App app{"PWER critical values, adjusted p-values and simulations", "pwer-tool"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  app.add_option("--out", g.out_path, "write the result to this file plus a manifest");
  app.add_option("--seed", g.seed, "random seed (required for stochastic output)");
  app.add_option("--threads", g.threads, "worker threads, 0 = all cores");
  app.add_option("--tol", g.tol, "root-finding tolerance on the critical value");

  // crit
  ProblemArgs crit_args;
  CLI::App* crit = app.add_subcommand("crit", "critical value for PWER control");
  crit_args.attach(crit);
  bool with_fwer = false;
  crit->add_flag("--fwer", with_fwer, "also report the FWER critical value");

  // adjust-p
  ProblemArgs adj_args;
  std::vector<double> z_obs;
  CLI::App* adjust = app.add_subcommand("adjust-p", "PWER-adjusted p-values");
  adj_args.attach(adjust);
  adjust->add_option("--z", z_obs, "observed statistics")->required()->delimiter(',');

  // two-pop
  std::string tp_scenario = "i";
  double tp_alpha = 0.025;
  double tp_beta = 0.2;
  std::optional<double> tp_pi12;
  int tp_sweep = 100;
  CLI::App* two_pop = app.add_subcommand("two-pop", "two overlapping populations");
  two_pop->add_option("--scenario", tp_scenario, "i, ii or indep");
  two_pop->add_option("--alpha", tp_alpha);
  two_pop->add_option("--beta", tp_beta);
  two_pop->add_option("--pi12", tp_pi12, "single overlap prevalence (JSON output)");
  two_pop->add_option("--sweep", tp_sweep, "grid intervals on [0, 1] (CSV output)");

  // umbrella
  std::string um_config_file;
  std::optional<int> um_l;
  std::optional<int> um_n;
  std::optional<double> um_q, um_tau, um_theta, um_sigma, um_alpha;
  std::vector<double> um_pi;
  std::string um_control = "both";
  std::size_t um_reps = 10'000;
  std::size_t um_draws = 1'000'000;
  CLI::App* umbrella = app.add_subcommand("umbrella", "umbrella trial simulation");
  umbrella->add_option("--config", um_config_file, "umbrella config JSON file");
  umbrella->add_option("--l", um_l, "number of strata");
  umbrella->add_option("--N", um_n, "total sample size");
  umbrella->add_option("--pi", um_pi, "stratum prevalences")->delimiter(',');
  umbrella->add_option("--q", um_q, "fraction of zero effects");
  umbrella->add_option("--tau", um_tau, "relative half-range of positive effects");
  umbrella->add_option("--theta", um_theta, "average positive effect");
  umbrella->add_option("--sigma", um_sigma);
  umbrella->add_option("--alpha", um_alpha);
  umbrella->add_option("--control", um_control, "pwer, fwer or both");
  umbrella->add_option("--reps", um_reps, "simulated trials");
  umbrella->add_option("--draws", um_draws, "null draws for the critical values");

  // prev-sim
  std::string ps_config_file;
  std::optional<std::string> ps_scenario;
  std::optional<std::uint64_t> ps_n;
  std::optional<std::size_t> ps_reps;
  std::optional<double> ps_alpha, ps_pi_min;
  std::optional<int> ps_steps;
  CLI::App* prev = app.add_subcommand("prev-sim", "PWER with estimated prevalences");
  prev->add_option("--config", ps_config_file, "prev-sim config JSON file");
  prev->add_option("--scenario", ps_scenario, "i or ii");
  prev->add_option("--N", ps_n, "total sample size");
  prev->add_option("--reps", ps_reps, "replications per grid point");
  prev->add_option("--alpha", ps_alpha);
  prev->add_option("--pi-min", ps_pi_min, "floor for estimated prevalences");
  prev->add_option("--grid-steps", ps_steps, "grid intervals per axis");

  // sci
  ProblemArgs sci_args;
  std::vector<double> sci_est, sci_se;
  std::string sci_side = "lower";
  std::size_t sci_cov_reps = 0;
  CLI::App* sci = app.add_subcommand("sci", "simultaneous confidence bounds");
  sci_args.attach(sci);
  sci->add_option("--estimates", sci_est)->required()->delimiter(',');
  sci->add_option("--ses", sci_se)->required()->delimiter(',');
  sci->add_option("--side", sci_side, "lower, upper or two-sided");
  sci->add_option("--coverage-reps", sci_cov_reps, "also simulate coverage (needs --seed)");

  const auto fail = [&](std::string_view kind, std::string_view message, int code) {
    err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
    return code;
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail("validation", e.what(), kExitValidation);
  }

  try {
    json config = json::object();
    if (*crit) {
      PwerProblem problem = crit_args.build(config);
      const SolverOptions opts = crit_args.solver(problem, g, config);
      const CriticalValueResult r = solve_critical(problem, crit_args.alpha, opts);
      json result = critical_json(r, problem);
      if (with_fwer) result["fwer"] = critical_json(solve_fwer_critical(problem, crit_args.alpha, opts), problem);
      runner.emit("crit", result.dump(2) + "\n", config);
    } else if (*adjust) {
      PwerProblem problem = adj_args.build(config);
      MvOptions mv;
      if (!problem.deterministic()) {
        if (!g.seed) throw ValidationError("--seed is required for Monte Carlo evaluation");
        mv.seed = *g.seed;
        config["seed"] = *g.seed;
      }
      if (g.tol) mv.abs_tol = *g.tol;
      config["z"] = z_obs;
      const auto p = adjusted_p(problem, z_obs, mv);
      runner.emit("adjust-p", json{{"adjusted_p", r6_array(p)}}.dump(2) + "\n", config);
    } else if (*two_pop) {
      const TwoPopKind kind = two_pop_kind_from_string(tp_scenario);
      config = {{"scenario", tp_scenario}, {"alpha", tp_alpha}, {"beta", tp_beta}};
      if (tp_pi12) {
        const TwoPopScenario sc{kind, *tp_pi12, tp_alpha, tp_beta};
        sc.validate();
        const CriticalPair c = critical_values(sc);
        config["pi12"] = *tp_pi12;
        const json result{{"pi12", r6(*tp_pi12)},
                          {"rho", r6(scenario_correlation(sc))},
                          {"c_pwer", r6(c.c_pwer)},
                          {"c_fwer", r6(c.c_fwer)},
                          {"q_pwer", r6(sample_size_factor(c.c_pwer, tp_alpha, tp_beta))},
                          {"q_fwer", r6(sample_size_factor(c.c_fwer, tp_alpha, tp_beta))}};
        runner.emit("two-pop", result.dump(2) + "\n", config);
      } else {
        if (tp_sweep < 1) throw ValidationError("--sweep must be positive");
        std::vector<double> grid;
        for (int k = 0; k <= tp_sweep; ++k) grid.push_back(static_cast<double>(k) / tp_sweep);
        config["sweep"] = tp_sweep;
        const auto rows = inflation_sweep(kind, tp_alpha, tp_beta, grid, g.threads);
        runner.emit("two-pop", inflation_csv(rows), config);
      }
    } else if (*umbrella) {
      UmbrellaConfig uc;
      json file_config = json::object();
      if (!um_config_file.empty()) {
        file_config = read_json_file(um_config_file);
        uc = umbrella_config_from_json(file_config);
      }
      if (um_l) uc.l = *um_l;
      if (um_n) uc.n_total = *um_n;
      if (!um_pi.empty()) uc.pi = um_pi;
      if (um_q) uc.q = *um_q;
      if (um_tau) uc.tau = *um_tau;
      if (um_theta) uc.theta_overall = *um_theta;
      if (um_sigma) uc.sigma = *um_sigma;
      if (um_alpha) uc.alpha = *um_alpha;
      uc.validate();
      if (um_control != "both") control_from_string(um_control);
      const std::uint64_t seed = require_seed(g, file_config, "umbrella");
      CriticalOptions co{um_draws, seed, g.threads};
      const UmbrellaCriticals crits = umbrella_criticals(uc, co);
      const PairedReport both = simulate_pair(uc, crits, um_reps, mix_seed(seed, 1), g.threads);
      config = to_json(uc);
      config["control"] = um_control;
      config["reps"] = um_reps;
      config["draws"] = um_draws;
      config["seed"] = seed;
      json result;
      if (um_control == "both") {
        result = {{"pwer", report_json(both.pwer)},
                  {"fwer", report_json(both.fwer)},
                  {"dominance_violations", both.dominance_violations}};
      } else {
        result = report_json(um_control == "pwer" ? both.pwer : both.fwer);
      }
      runner.emit("umbrella", result.dump(2) + "\n", config);
    } else if (*prev) {
      json file_config = json::object();
      if (!ps_config_file.empty()) {
        file_config = read_json_file(ps_config_file);
        if (!file_config.is_object()) throw ValidationError("prev-sim config must be a JSON object");
      }
      json merged = file_config;
      if (ps_scenario) merged["scenario"] = *ps_scenario;
      if (ps_n) merged["N"] = *ps_n;
      if (ps_reps) merged["n_reps"] = *ps_reps;
      if (ps_alpha) merged["alpha"] = *ps_alpha;
      if (ps_pi_min) merged["pi_min"] = *ps_pi_min;
      if (ps_steps) merged["grid_steps"] = *ps_steps;
      merged["seed"] = require_seed(g, file_config, "prev-sim");
      PrevSimConfig pc = prevsim_config_from_json(merged);
      pc.threads = g.threads;
      const auto grid = prevalence_effect_grid(pc);
      runner.emit("prev-sim", grid_csv(grid), to_json(pc));
    } else if (*sci) {
      PwerProblem problem = sci_args.build(config);
      const SolverOptions opts = sci_args.solver(problem, g, config);
      const Side side = side_from_string(sci_side);
      if (static_cast<int>(sci_est.size()) != problem.m()) {
        throw ValidationError("need one estimate per hypothesis");
      }
      const CriticalValueResult crit_value = solve_critical(problem, sci_args.alpha, opts);
      const SciResult b = sci_bounds(sci_est, sci_se, crit_value.c_star, side);
      config["estimates"] = sci_est;
      config["ses"] = sci_se;
      config["side"] = std::string(to_string(side));
      json result{{"c_star", r6(b.c_star)},
                  {"side", std::string(to_string(side))},
                  {"lower", r6_array(b.lower)},
                  {"upper", r6_array(b.upper)}};
      if (sci_cov_reps > 0) {
        if (!g.seed) throw ValidationError("--coverage-reps needs --seed");
        const CoverageEstimate cov =
            coverage_sim(problem, crit_value.c_star, side, sci_cov_reps, *g.seed, g.threads);
        config["coverage_reps"] = sci_cov_reps;
        config["seed"] = *g.seed;
        result["coverage"] = {{"estimate", r6(cov.coverage)},
                              {"standard_error", r6(cov.standard_error)},
                              {"n_reps", cov.n_reps},
                              {"duality_violations", cov.duality_violations}};
      }
      runner.emit("sci", result.dump(2) + "\n", config);
    }
  } catch (const ValidationError& e) {
    return fail("validation", e.what(), kExitValidation);
  } catch (const json::exception& e) {
    return fail("validation", e.what(), kExitValidation);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), kExitNumerical);
  }
  return kExitOk;
}

}  // namespace pwer
