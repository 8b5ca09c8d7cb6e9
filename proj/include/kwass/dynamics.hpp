#pragma once

#include "kwass/fields.hpp"
#include "kwass/measures.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace kwass {

struct FreeMode {};
struct KernelMode {
  KernelSpec kernel = KernelSpec::zero();
};
struct PoissonMode {
  double eps = 1.0;
  int grid = 256;
};
using Mode = std::variant<FreeMode, KernelMode, PoissonMode>;

std::string mode_name(const Mode& mode);

struct SimConfig {
  double dt = 1e-3;
  double t_end = 1.0;
  Mode mode = FreeMode{};
  std::string integrator = "leapfrog";
  std::uint64_t seed = 0;
  Index N = 1000;
  double snap_every = 0.05;  // time between snapshots, a multiple of dt

  /// Throws ConfigError naming the offending field.
  void validate() const;
  Index steps() const;
  Index snap_stride() const;
};

/// Acceleration of every particle (d x N) for a given state.
using ForceEval = std::function<Matrix(const PhaseEnsemble&)>;

/// Self-consistent acceleration and energy for one ensemble under a mode.
class ForceModel {
 public:
  explicit ForceModel(Mode mode);

  const Mode& mode() const { return mode_; }
  Matrix forces(const PhaseEnsemble& ens) const;
  ForceEval evaluator() const;

  /// Kinetic energy plus the field term (poisson) or interaction term
  /// (kernel, sign such that the total is conserved by the flow).
  double energy(const PhaseEnsemble& ens) const;
  /// Max of the deposited density on the mode's grid (poisson mode), else 0.
  double density_max(const PhaseEnsemble& ens) const;

 private:
  Mode mode_;
};

/// x <- x + t v (wrapped), v unchanged.
PhaseEnsemble free_transport(const PhaseEnsemble& ens, double t);

/// One kick-drift-kick step. Throws NumericalError on a non-finite force.
PhaseEnsemble step(const PhaseEnsemble& ens, const ForceEval& force, double dt);

double kinetic_energy(const PhaseEnsemble& ens);
double energy(const PhaseEnsemble& ens, const Mode& mode);

/// Runs a single ensemble to t_end; returns the final state.
PhaseEnsemble simulate(const SimConfig& cfg, const PhaseEnsemble& initial);

struct PairDiagnostics {
  double t = 0.0;
  double D = 0.0;             // 1/2 int |X1 - X2|^2 d pi0
  double E = 0.0;             // 1/2 int |V1 - V2|^2 d pi0
  double mean_dx = 0.0;       // int |X1 - X2| d pi0
  double mean_dv = 0.0;       // int |V1 - V2| d pi0
  double mean_shifted = 0.0;  // int |(X1 - t V1) - (X2 - t V2)| d pi0
  double energy1 = 0.0;
  double energy2 = 0.0;
  double A = 0.0;             // max rho1 + max rho2 (poisson mode)
};

struct PairedTrajectory {
  Coupling pi0;
  std::vector<double> times;
  std::vector<PairDiagnostics> diagnostics;
  // Filled only when requested.
  std::vector<PhaseEnsemble> first;
  std::vector<PhaseEnsemble> second;
};

PairDiagnostics pair_diagnostics(const PhaseEnsemble& a, const PhaseEnsemble& b, const Coupling& pi0, double t);

struct PairOptions {
  bool store_snapshots = false;
  bool energies = true;
};

/// Evolves both ensembles under their own fields and records diagnostics
/// under the fixed coupling pi0 at t = 0, every snap_every and at t_end.
/// Throws StructuralError when pi0 is not a coupling of (mu0, nu0).
PairedTrajectory simulate_pair(const SimConfig& cfg, const PhaseEnsemble& mu0, const PhaseEnsemble& nu0,
                               const Coupling& pi0, const PairOptions& options = {});

}  // namespace kwass
