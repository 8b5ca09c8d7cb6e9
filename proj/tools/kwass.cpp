// Command-line front end: scenario runs plus standalone distance, bound and
// verification tools.

#include "kwass/bounds.hpp"
#include "kwass/ensemble_io.hpp"
#include "kwass/errors.hpp"
#include "kwass/parallel.hpp"
#include "kwass/scenario.hpp"
#include "kwass/transport.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace kwass;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::int64_t seed = -1;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "Scenario file (TOML or JSON)");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--seed", c.seed, "Override the scenario seed")->check(CLI::NonNegativeNumber);
  cmd->add_option("--threads", c.threads, "Worker threads (default: KWASS_THREADS or 1)")->check(CLI::PositiveNumber);
}

Scenario load_with_overrides(const Common& c) {
  Scenario sc = load_scenario(c.config);
  if (c.seed >= 0) {
    sc.seed = static_cast<std::uint64_t>(c.seed);
    sc.sim.seed = sc.seed;
  }
  return sc;
}

fs::path out_dir(const Common& c, const Scenario& sc) { return c.out.empty() ? fs::path("out") / sc.name : fs::path(c.out); }

std::string fmt(double v) { return format_number(v); }

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
}

// ---------------------------------------------------------------------------

struct DistanceArgs {
  std::string mu, nu, cost = "plain", solver = "exact", weight = "log_eps", out;
  double p = 1.0, lambda = 1.0, t = 0.0, eps = 1.0, eta = 1e-3;
  std::vector<double> abc;
};

int cmd_distance(const DistanceArgs& a) {
  const PhaseEnsemble mu = read_ensemble_csv(a.mu);
  const PhaseEnsemble nu = read_ensemble_csv(a.nu);
  std::ostringstream csv;
  csv << "variant,p,params,value,converged\n";
  if (a.cost == "nonlinear") {
    const WeightFunction w = a.weight == "capped_phi" ? WeightFunction::capped_phi(a.eps) : WeightFunction::log_eps(a.eps);
    const NonlinearResult r = nonlinear_wasserstein(mu, nu, a.p, w);
    csv << "nonlinear," << fmt(a.p) << ",eps=" << fmt(a.eps) << ";weight=" << a.weight << ';' << "lambda_star="
        << fmt(r.lambda_star) << ',' << fmt(r.value) << ',' << (r.converged ? "true" : "false") << '\n';
  } else {
    CostSpec spec = CostSpec::plain(a.p);
    if (a.cost == "aniso") {
      spec = CostSpec::anisotropic(a.p, a.lambda);
    } else if (a.cost == "quad") {
      if (a.abc.size() != 3) throw ConfigError("--abc", "expects three values a,b,c");
      spec = CostSpec::quadratic(a.p, a.abc[0], a.abc[1], a.abc[2]);
    } else if (a.cost == "shifted") {
      spec = CostSpec::shifted(a.p, a.t);
    }
    TransportResult r;
    if (a.solver == "exact") {
      r = solve_exact(mu, nu, spec);
    } else {
      EntropicOptions eo;
      eo.eta = a.eta;
      r = solve_entropic(mu, nu, spec, eo);
    }
    csv << spec.name() << ',' << fmt(a.p) << ',' << spec.params() << ',' << fmt(r.value) << ','
        << (r.solver.converged ? "true" : "false") << '\n';
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(a.out, csv.str());
  }
  return kExitPass;
}

// ---------------------------------------------------------------------------

struct BoundArgs {
  std::string kind = "combined", out;
  BoundParams params;
  double W0 = 0.0, t_end = 1.0, A = 2.0;
  int steps = 20;
};

std::vector<double> time_grid(double t_end, int steps) {
  std::vector<double> t;
  for (int k = 0; k <= steps; ++k) t.push_back(t_end * k / steps);
  return t;
}

int cmd_bounds(BoundArgs a) {
  const BoundKind kind = parse_bound_kind(a.kind);
  a.params.W10 = a.params.W20 = a.W0;
  const std::vector<double> t = time_grid(a.t_end, a.steps);
  std::vector<double> A_int;
  for (double s : t) A_int.push_back(a.A * s);  // constant density bound A
  const BoundCurve curve = evaluate_bound(kind, a.params, t, A_int);
  std::ostringstream csv;
  csv << "kind,t,value,hypothesis_ok\n";
  for (std::size_t k = 0; k < t.size(); ++k) {
    csv << bound_kind_name(kind) << ',' << fmt(t[k]) << ',' << fmt(curve.values[k]) << ','
        << (curve.hypothesis_ok[k] ? "true" : "false") << '\n';
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(fs::path(a.out) / "bounds.csv", csv.str());
  }
  return kExitPass;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string trajectory, column = "coupling_w1", kind = "combined", out = ".";
  BoundParams params;
  double allowance = 1e-9;
};

int cmd_verify(VerifyArgs a) {
  const TrajectoryTable table = read_trajectory_csv(a.trajectory);
  const std::vector<double> t = table.column("t");
  // Derived columns: the W1 and W2 costs of the carried coupling.
  std::vector<double> measured;
  if (a.column == "coupling_w1") {
    const auto dx = table.column("mean_dx"), dv = table.column("mean_dv");
    for (std::size_t k = 0; k < dx.size(); ++k) measured.push_back(dx[k] + dv[k]);
  } else if (a.column == "coupling_w2") {
    const auto D = table.column("D"), E = table.column("E");
    for (std::size_t k = 0; k < D.size(); ++k) measured.push_back(std::sqrt(2.0 * (D[k] + E[k])));
  } else {
    measured = table.column(a.column);
  }
  if (t.empty()) throw ConfigError(a.trajectory, "no rows");
  const BoundKind kind = parse_bound_kind(a.kind);
  if (kind == BoundKind::loeper_improved || kind == BoundKind::R_of_t) {
    throw ConfigError("--kind", "verify supports the W1 and classical W2 bounds; use `run` for the others");
  }
  a.params.W10 = a.params.W20 = measured.front();
  const BoundCurve curve = evaluate_bound(kind, a.params, t);
  const StabilityReport rep = verify_bound(t, measured, curve, std::vector<double>(t.size(), a.allowance));
  std::ostringstream csv;
  csv << "t,measured,bound,allowance,margin,hypothesis_ok,status\n";
  for (std::size_t k = 0; k < t.size(); ++k) {
    const bool ok = measured[k] <= curve.values[k] * (1.0 + a.allowance);
    csv << fmt(t[k]) << ',' << fmt(measured[k]) << ',' << fmt(curve.values[k]) << ',' << fmt(a.allowance) << ','
        << fmt(rep.margin[k]) << ',' << (curve.hypothesis_ok[k] ? "true" : "false") << ',' << (ok ? "pass" : "fail")
        << '\n';
  }
  std::ostringstream verdict;
  verdict << "trajectory: " << a.trajectory << '\n'
          << "measured column: " << a.column << '\n'
          << "bound: " << bound_kind_name(kind) << " B=" << fmt(a.params.B) << " W0=" << fmt(measured.front()) << '\n'
          << "relative allowance: " << fmt(a.allowance) << '\n'
          << "verdict: " << (rep.pass ? "PASS" : "FAIL") << '\n';
  write_text(fs::path(a.out) / "report.csv", csv.str());
  write_text(fs::path(a.out) / "verdict.txt", verdict.str());
  std::cout << verdict.str();
  return rep.pass ? kExitPass : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kwass: Wasserstein stability of kinetic particle systems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kwass 0.1.0");

  Common run_c, sim_c, val_c;
  auto* run = app.add_subcommand("run", "Run a scenario: simulate, measure, bound, verify");
  add_common(run, run_c, true);

  bool snapshots = false;
  auto* simulate = app.add_subcommand("simulate", "Simulate a scenario pair and write trajectory.csv");
  add_common(simulate, sim_c, true);
  simulate->add_flag("--snapshots", snapshots, "Also write per-snapshot ensemble CSVs");

  auto* list = app.add_subcommand("list", "List bundled scenarios");
  auto* validate = app.add_subcommand("validate", "Check a scenario file without running it");
  validate->add_option("--config", val_c.config, "Scenario file")->required();

  DistanceArgs da;
  auto* distance = app.add_subcommand("distance", "Transport distance between two ensemble CSVs");
  distance->add_option("--in-mu", da.mu, "First ensemble CSV")->required();
  distance->add_option("--in-nu", da.nu, "Second ensemble CSV")->required();
  distance->add_option("--cost", da.cost, "Cost variant")
      ->check(CLI::IsMember({"plain", "aniso", "quad", "shifted", "nonlinear"}));
  distance->add_option("--p", da.p, "Exponent p >= 1");
  distance->add_option("--lambda", da.lambda, "Anisotropy weight (aniso)");
  distance->add_option("--abc", da.abc, "Quadratic form a,b,c (quad)")->delimiter(',');
  distance->add_option("--t", da.t, "Shift time (shifted)");
  distance->add_option("--eps", da.eps, "Weight parameter (nonlinear)");
  distance->add_option("--weight", da.weight, "Weight function (nonlinear)")->check(CLI::IsMember({"log_eps", "capped_phi"}));
  distance->add_option("--solver", da.solver, "Solver")->check(CLI::IsMember({"exact", "entropic"}));
  distance->add_option("--eta", da.eta, "Entropic regularization");
  distance->add_option("--out", da.out, "Output CSV (default stdout)");
  int distance_threads = 0;
  distance->add_option("--threads", distance_threads, "Worker threads")->check(CLI::PositiveNumber);

  BoundArgs ba;
  auto* bounds = app.add_subcommand("bounds", "Evaluate a stability bound on a time grid");
  bounds->add_option("--kind", ba.kind, "dobrushin|improved|combined|loeper-classical|loeper-improved|R")->required();
  bounds->add_option("--B", ba.params.B, "Kernel Hessian bound");
  bounds->add_option("--W0", ba.W0, "Initial distance W1(0) or W2(0)");
  bounds->add_option("--eps", ba.params.eps, "Scaled Debye length");
  bounds->add_option("--C_d", ba.params.C_d, "Dimensional constant");
  bounds->add_option("--c0", ba.params.c0, "Small-data constant");
  bounds->add_option("--C", ba.params.C, "Classical Loeper rate");
  bounds->add_option("--c_d", ba.params.c_d, "Classical Loeper ceiling");
  bounds->add_option("--Q0", ba.params.Q0, "Q(0) for R");
  bounds->add_option("--A", ba.A, "Constant density bound A (integral A t)");
  bounds->add_option("--t-end", ba.t_end, "Horizon");
  bounds->add_option("--steps", ba.steps, "Number of time intervals")->check(CLI::PositiveNumber);
  bounds->add_option("--out", ba.out, "Output directory (default stdout)");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Check a trajectory column against a bound");
  verify->add_option("--trajectory", va.trajectory, "trajectory.csv")->required();
  verify->add_option("--column", va.column, "Measured column, or coupling_w1 (default) / coupling_w2 for the cost of pi0");
  verify->add_option("--kind", va.kind, "Bound kind");
  verify->add_option("--B", va.params.B, "Kernel Hessian bound");
  verify->add_option("--C", va.params.C, "Classical Loeper rate");
  verify->add_option("--c_d", va.params.c_d, "Classical Loeper ceiling");
  verify->add_option("--allowance", va.allowance, "Relative allowance");
  verify->add_option("--out", va.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*run) {
      if (run_c.threads > 0) parallel::set_threads(run_c.threads);
      const Scenario sc = load_with_overrides(run_c);
      const RunResult r = run_scenario(sc, out_dir(run_c, sc));
      std::cout << r.verdict;
      return r.exit_code;
    }
    if (*simulate) {
      if (sim_c.threads > 0) parallel::set_threads(sim_c.threads);
      const Scenario sc = load_with_overrides(sim_c);
      for (const auto& f : run_simulation(sc, out_dir(sim_c, sc), snapshots)) std::cout << f << '\n';
      return kExitPass;
    }
    if (*list) {
      for (const auto& p : list_scenarios()) std::cout << p.stem().string() << '\t' << p.string() << '\n';
      return kExitPass;
    }
    if (*validate) {
      for (const auto& line : validate_config(val_c.config)) std::cout << line << '\n';
      return kExitPass;
    }
    if (*distance) {
      if (distance_threads > 0) parallel::set_threads(distance_threads);
      return cmd_distance(da);
    }
    if (*bounds) return cmd_bounds(ba);
    if (*verify) return cmd_verify(va);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitUsage;
}
