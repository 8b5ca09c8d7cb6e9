#include "kwass/dynamics.hpp"

#include "kwass/errors.hpp"
#include "kwass/parallel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace kwass {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Index round_ratio(double num, double den, const char* path, const char* what) {
  const double r = num / den;
  const double k = std::round(r);
  if (std::abs(r - k) > 1e-9 * std::max(1.0, r)) throw ConfigError(path, what);
  return static_cast<Index>(k);
}

}  // namespace

std::string mode_name(const Mode& mode) {
  return std::visit(overloaded{[](const FreeMode&) { return std::string("free"); },
                               [](const KernelMode&) { return std::string("kernel"); },
                               [](const PoissonMode&) { return std::string("poisson"); }},
                    mode);
}

void SimConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("sim.dt", "must be > 0");
  if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw ConfigError("sim.t_end", "must be >= 0");
  if (integrator != "leapfrog") throw ConfigError("sim.integrator", "only 'leapfrog' is supported");
  if (N < 1) throw ConfigError("sim.N", "must be >= 1");
  if (!(snap_every > 0.0) || !std::isfinite(snap_every)) throw ConfigError("sim.snap_every", "must be > 0");
  round_ratio(t_end, dt, "sim.t_end", "must be a multiple of dt");
  if (round_ratio(snap_every, dt, "sim.snap_every", "must be a multiple of dt") < 1) {
    throw ConfigError("sim.snap_every", "must be at least dt");
  }
  if (const auto* p = std::get_if<PoissonMode>(&mode)) {
    if (!(p->eps > 0.0) || p->eps > 1.0) throw ConfigError("sim.eps", "must lie in (0, 1]");
    if (p->grid < 4) throw ConfigError("sim.grid", "must be >= 4");
  }
}

Index SimConfig::steps() const { return round_ratio(t_end, dt, "sim.t_end", "must be a multiple of dt"); }

Index SimConfig::snap_stride() const {
  return round_ratio(snap_every, dt, "sim.snap_every", "must be a multiple of dt");
}

// ---------------------------------------------------------------------------

ForceModel::ForceModel(Mode mode) : mode_(std::move(mode)) {}

Matrix ForceModel::forces(const PhaseEnsemble& ens) const {
  return std::visit(
      overloaded{[&](const FreeMode&) -> Matrix { return Matrix::Zero(ens.dim(), ens.size()); },
                 [&](const KernelMode& k) -> Matrix { return kernel_forces(ens, k.kernel); },
                 [&](const PoissonMode& p) -> Matrix {
                   return gather_field(poisson_solve(deposit_density(ens, p.grid), p.eps), ens);
                 }},
      mode_);
}

ForceEval ForceModel::evaluator() const {
  return [model = *this](const PhaseEnsemble& ens) { return model.forces(ens); };
}

double ForceModel::energy(const PhaseEnsemble& ens) const {
  const double kinetic = kinetic_energy(ens);
  return std::visit(overloaded{[&](const FreeMode&) { return kinetic; },
                               [&](const KernelMode& k) {
                                 // dv/dt = grad K * rho is generated by -1/2 sum w_i w_j K(x_i - x_j).
                                 return k.kernel.has_potential() ? kinetic - kernel_pair_energy(ens, k.kernel)
                                                                 : kinetic;
                               },
                               [&](const PoissonMode& p) {
                                 return kinetic + field_energy(poisson_solve(deposit_density(ens, p.grid), p.eps));
                               }},
                    mode_);
}

double ForceModel::density_max(const PhaseEnsemble& ens) const {
  if (const auto* p = std::get_if<PoissonMode>(&mode_)) return deposit_density(ens, p->grid).values.maxCoeff();
  return 0.0;
}

PhaseEnsemble free_transport(const PhaseEnsemble& ens, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("free_transport: t must be >= 0");
  return ens.with_state(ens.positions() + t * ens.velocities(), ens.velocities());
}

namespace {

void require_finite(const Matrix& f) {
  if (f.allFinite()) return;
  for (Index i = 0; i < f.cols(); ++i) {
    if (!f.col(i).allFinite()) {
      std::ostringstream msg;
      msg << "non-finite force at particle " << i;
      throw NumericalError(msg.str());
    }
  }
}

struct State {
  PhaseEnsemble ens;
  Matrix force;
};

// Kick-drift-kick; the closing force is kept for the next step.
void advance(State& s, const ForceEval& force, double dt) {
  const Matrix v_half = s.ens.velocities() + 0.5 * dt * s.force;
  PhaseEnsemble drifted = s.ens.with_state(s.ens.positions() + dt * v_half, v_half);
  Matrix f_new = force(drifted);
  require_finite(f_new);
  Matrix v_new = v_half + 0.5 * dt * f_new;
  s.ens = drifted.with_state(drifted.positions(), std::move(v_new));
  s.force = std::move(f_new);
}

State initial_state(const PhaseEnsemble& ens, const ForceEval& force) {
  Matrix f = force(ens);
  require_finite(f);
  return {ens, std::move(f)};
}

}  // namespace

PhaseEnsemble step(const PhaseEnsemble& ens, const ForceEval& force, double dt) {
  State s = initial_state(ens, force);
  advance(s, force, dt);
  return s.ens;
}

double kinetic_energy(const PhaseEnsemble& ens) {
  return 0.5 * ens.weights().dot(ens.velocities().colwise().squaredNorm().transpose());
}

double energy(const PhaseEnsemble& ens, const Mode& mode) { return ForceModel(mode).energy(ens); }

PhaseEnsemble simulate(const SimConfig& cfg, const PhaseEnsemble& initial) {
  cfg.validate();
  const ForceModel model(cfg.mode);
  const ForceEval force = model.evaluator();
  State s = initial_state(initial, force);
  for (Index k = 0; k < cfg.steps(); ++k) advance(s, force, cfg.dt);
  return s.ens;
}

PairDiagnostics pair_diagnostics(const PhaseEnsemble& a, const PhaseEnsemble& b, const Coupling& pi0, double t) {
  PairDiagnostics out;
  out.t = t;
  const Index d = a.dim();
  for (const auto& e : pi0.entries) {
    const auto xa = a.positions().col(e.i);
    const auto xb = b.positions().col(e.j);
    const auto va = a.velocities().col(e.i);
    const auto vb = b.velocities().col(e.j);
    double dx2 = 0.0, dv2 = 0.0, sh2 = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double dx = detail::minimal_image(xa[k] - xb[k]);
      const double dv = va[k] - vb[k];
      const double sh = detail::minimal_image((xa[k] - t * va[k]) - (xb[k] - t * vb[k]));
      dx2 += dx * dx;
      dv2 += dv * dv;
      sh2 += sh * sh;
    }
    out.D += 0.5 * e.mass * dx2;
    out.E += 0.5 * e.mass * dv2;
    out.mean_dx += e.mass * std::sqrt(dx2);
    out.mean_dv += e.mass * std::sqrt(dv2);
    out.mean_shifted += e.mass * std::sqrt(sh2);
  }
  return out;
}

PairedTrajectory simulate_pair(const SimConfig& cfg, const PhaseEnsemble& mu0, const PhaseEnsemble& nu0,
                               const Coupling& pi0, const PairOptions& options) {
  cfg.validate();
  if (mu0.dim() != nu0.dim()) throw StructuralError("simulate_pair: ensembles differ in dimension");
  const CouplingCheck check = validate_coupling(pi0, mu0, nu0);
  if (!check.pass) {
    throw StructuralError("simulate_pair: pi0 is not a coupling of the initial ensembles (marginal residual " +
                          std::to_string(check.max_marginal_residual) + ")");
  }

  const ForceModel model(cfg.mode);
  const ForceEval force = model.evaluator();
  PairedTrajectory traj;
  traj.pi0 = pi0;

  auto record = [&](const State& s1, const State& s2, double t) {
    PairDiagnostics diag = pair_diagnostics(s1.ens, s2.ens, pi0, t);
    if (options.energies) {
      diag.energy1 = model.energy(s1.ens);
      diag.energy2 = model.energy(s2.ens);
    }
    diag.A = model.density_max(s1.ens) + model.density_max(s2.ens);
    traj.times.push_back(t);
    traj.diagnostics.push_back(diag);
    if (options.store_snapshots) {
      traj.first.push_back(s1.ens);
      traj.second.push_back(s2.ens);
    }
  };

  State s1 = initial_state(mu0, force);
  State s2 = initial_state(nu0, force);
  record(s1, s2, 0.0);
  const Index steps = cfg.steps();
  const Index stride = cfg.snap_stride();
  for (Index k = 1; k <= steps; ++k) {
    advance(s1, force, cfg.dt);
    advance(s2, force, cfg.dt);
    if (k % stride == 0 || k == steps) record(s1, s2, static_cast<double>(k) * cfg.dt);
  }
  return traj;
}

}  // namespace kwass
