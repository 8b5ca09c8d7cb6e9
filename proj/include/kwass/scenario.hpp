#pragma once

#include "kwass/bounds.hpp"
#include "kwass/dynamics.hpp"
#include "kwass/implicit_weight.hpp"
#include "kwass/transport.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kwass {

struct InitialSpec {
  int d = 1;
  std::string velocity = "gaussian";  // gaussian | uniform | zero
  double sigma = 1.0;                 // std dev (gaussian) or half-width (uniform)
  double alpha = 0.0;                 // density 1 + alpha cos(2 pi k x1)
  int k = 1;
};

struct PairSpec {
  std::string kind = "velocity_shift";  // velocity_shift | position_shift | resample
  double delta = 1e-3;
  std::string coupling = "index";       // index | optimal
  double coupling_p = 1.0;              // exponent of the optimal initial coupling
};

struct DistanceSpec {
  std::string name;                 // label used by bounds and verify
  std::string variant = "plain";    // plain | aniso | quad | shifted
  double p = 1.0;
  double lambda = 1.0;
  double a = 1.0, b = 0.0, c = 1.0;
  double t = 0.0;
  std::string estimator = "exact";  // exact | entropic | coupling
  double eta = 1e-3;

  CostSpec cost() const;
};

struct BoundSpec {
  BoundKind kind = BoundKind::combined;
  BoundParams params;
  bool has_B = false;
  bool has_eps = false;
  std::string distance;  // supplies W10 / W20 from its t = 0 value
};

struct VerifySpec {
  std::string measured;  // a distance name or "Q"
  BoundKind bound = BoundKind::combined;
  double allowance = 3.0;  // multiple of the bootstrap sigma
  bool require_hypothesis = false;
};

struct QSpec {
  bool enabled = false;
  std::string weight = "log_eps";  // log_eps | capped_phi
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  SimConfig sim;
  std::vector<double> eps_sweep;  // poisson mode; one entry when not swept
  InitialSpec initial;
  PairSpec pair;
  std::vector<DistanceSpec> distances;
  std::vector<BoundSpec> bounds;
  std::optional<VerifySpec> verify;
  QSpec q;
  std::string canonical;  // normalized JSON of the input, for the manifest
};

/// Reads TOML (.toml) or JSON (.json). Throws ConfigError with the field path.
Scenario load_scenario(const std::filesystem::path& file);
Scenario parse_scenario_text(const std::string& text, bool json, const std::string& name);

/// Parses and checks a config without running anything; returns notes such
/// as "ok" or the defaults applied.
std::vector<std::string> validate_config(const std::filesystem::path& file);

/// Bundled scenario directory; KWASS_SCENARIOS overrides it.
std::filesystem::path default_scenario_dir();
/// Scenario files (.toml, .json) in dir, sorted by name.
std::vector<std::filesystem::path> list_scenarios(const std::filesystem::path& dir = default_scenario_dir());

// ---------------------------------------------------------------------------

PhaseEnsemble sample_initial(const InitialSpec& spec, Index N, std::uint64_t seed);
PhaseEnsemble make_partner(const PhaseEnsemble& mu, const InitialSpec& initial, const PairSpec& pair,
                           std::uint64_t seed);
Coupling initial_coupling(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const PairSpec& pair);

void write_trajectory_csv(std::ostream& out, const PairedTrajectory& traj);

struct TrajectoryTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<double> column(const std::string& name) const;
};
TrajectoryTable read_trajectory_csv(const std::filesystem::path& file);

// ---------------------------------------------------------------------------

enum ExitCode : int { kExitPass = 0, kExitFail = 1, kExitUsage = 2, kExitNumerical = 3 };

struct RunResult {
  int exit_code = kExitPass;
  std::vector<std::string> files;  // relative to the output dir
  std::string verdict;
};

/// Full pipeline: simulate, measure, bound, verify. Writes trajectory.csv,
/// distances.csv, bounds.csv, report.csv, q_series.csv (when enabled),
/// verdict.txt, manifest.json and plot.gp; a swept eps gets one
/// subdirectory per value. Files written by a failed run are removed.
RunResult run_scenario(const Scenario& scenario, const std::filesystem::path& out);

/// Simulation stage only: trajectory.csv, plus snapshot ensembles when asked.
std::vector<std::string> run_simulation(const Scenario& scenario, const std::filesystem::path& out,
                                        bool snapshots);

}  // namespace kwass
