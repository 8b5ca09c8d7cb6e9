#include "doctest.h"
#include "oracles.hpp"

#include "kwass/dynamics.hpp"
#include "kwass/errors.hpp"

#include <numbers>
#include <random>

using namespace kwass;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

PhaseEnsemble one(double x, double v) {
  Matrix xm(1, 1), vm(1, 1);
  xm << x;
  vm << v;
  return PhaseEnsemble::uniform(xm, vm);
}

// Single particle in the fixed field of a unit mass at the origin:
// x'' = B sin(2 pi x) / (2 pi). Classical RK4 with a tiny step as reference.
double pendulum_reference(double x0, double v0, double B, double t_end) {
  const int steps = 200000;
  const double h = t_end / steps;
  auto acc = [B](double x) { return B * std::sin(kTwoPi * x) / kTwoPi; };
  double x = x0, v = v0;
  for (int k = 0; k < steps; ++k) {
    const double k1x = v, k1v = acc(x);
    const double k2x = v + 0.5 * h * k1v, k2v = acc(x + 0.5 * h * k1x);
    const double k3x = v + 0.5 * h * k2v, k3v = acc(x + 0.5 * h * k2x);
    const double k4x = v + h * k3v, k4v = acc(x + h * k3x);
    x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
    v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
  }
  return x;
}

}  // namespace

TEST_CASE("free transport") {
  CHECK(free_transport(one(0.2, 0.5), 1.0).positions()(0, 0) == doctest::Approx(0.7));
  CHECK(free_transport(one(0.8, 0.5), 1.0).positions()(0, 0) == doctest::Approx(0.3));
  CHECK(free_transport(one(0.8, 0.5), 1.0).velocities()(0, 0) == 0.5);
  CHECK_THROWS_AS(free_transport(one(0.1, 0.1), -1.0), std::invalid_argument);

  // Composition is exact when the arithmetic is: dyadic positions, velocities and times.
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> k(0, 1023);
  Matrix x(1, 100), v(1, 100);
  for (int j = 0; j < 100; ++j) {
    x(0, j) = k(rng) / 1024.0;
    v(0, j) = (k(rng) - 512) / 256.0;
  }
  const PhaseEnsemble e = PhaseEnsemble::uniform(x, v);
  const PhaseEnsemble ab = free_transport(free_transport(e, 0.25), 0.5), c = free_transport(e, 0.75);
  CHECK(ab.positions() == c.positions());
}

TEST_CASE("leapfrog step with zero force is free transport") {
  std::mt19937_64 rng(2);
  const PhaseEnsemble e = oracle::random_uniform(50, 2, rng);
  const ForceModel free{FreeMode{}};
  const PhaseEnsemble s = step(e, free.evaluator(), 1e-3);
  const PhaseEnsemble f = free_transport(e, 1e-3);
  CHECK(wrap_displacement((s.positions() - f.positions()).eval()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(s.velocities() == e.velocities());
}

TEST_CASE("leapfrog is second order on a single particle") {
  const double B = 1.0, T = 1.0, x0 = 0.1, v0 = 0.3;
  const double ref = pendulum_reference(x0, v0, B, T);
  // A fixed unit mass at 0 plus a test particle of negligible weight.
  const ForceEval force = [B](const PhaseEnsemble& e) {
    Matrix f(1, e.size());
    for (Index i = 0; i < e.size(); ++i) f(0, i) = B * std::sin(kTwoPi * e.positions()(0, i)) / kTwoPi;
    return f;
  };
  std::vector<double> err;
  for (double dt : {0.02, 0.01, 0.005}) {
    PhaseEnsemble e = one(x0, v0);
    const int steps = static_cast<int>(std::lround(T / dt));
    for (int k = 0; k < steps; ++k) e = step(e, force, dt);
    err.push_back(std::abs(oracle::wrap(e.positions()(0, 0) - ref)));
  }
  CHECK(std::log2(err[0] / err[1]) >= 1.9);
  CHECK(std::log2(err[1] / err[2]) >= 1.9);
}

TEST_CASE("leapfrog is time reversible in kernel mode") {
  std::mt19937_64 rng(3);
  const PhaseEnsemble e = oracle::random_uniform(200, 1, rng);
  const ForceEval f = ForceModel(KernelMode{KernelSpec::single_mode(1.0)}).evaluator();
  PhaseEnsemble s = e;
  for (int k = 0; k < 20; ++k) s = step(s, f, 1e-2);
  for (int k = 0; k < 20; ++k) s = step(s, f, -1e-2);
  CHECK(wrap_displacement((s.positions() - e.positions()).eval()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s.velocities() - e.velocities()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("symmetric pair keeps its centre-of-mass velocity") {
  Matrix x(1, 2), v(1, 2);
  x << 0.3, 0.6;
  v << 0.2, -0.1;
  PhaseEnsemble e = PhaseEnsemble::uniform(x, v);
  const ForceEval f = ForceModel(KernelMode{KernelSpec::single_mode(1.0)}).evaluator();
  const double p0 = e.velocities().sum();
  for (int k = 0; k < 1000; ++k) e = step(e, f, 1e-3);
  CHECK(std::abs(e.velocities().sum() - p0) < 1e-12);
}

TEST_CASE("non-finite force aborts the step") {
  const ForceEval bad = [](const PhaseEnsemble& e) {
    Matrix f = Matrix::Zero(e.dim(), e.size());
    f(0, e.size() - 1) = std::nan("");
    return f;
  };
  std::mt19937_64 rng(4);
  CHECK_THROWS_WITH_AS(step(oracle::random_uniform(3, 1, rng), bad, 0.1), "non-finite force at particle 2",
                       NumericalError);
}

TEST_CASE("energy") {
  Matrix x(1, 4), v(1, 4);
  x << 0.1, 0.2, 0.3, 0.4;
  v << 1, -1, 1, -1;
  const PhaseEnsemble e = PhaseEnsemble::uniform(x, v);
  CHECK(energy(e, FreeMode{}) == doctest::Approx(0.5));
  CHECK(kinetic_energy(e) == doctest::Approx(0.5));

  // Evenly spaced particles deposit a flat density: no field energy.
  const int n = 64;
  Matrix xs(1, n);
  for (int j = 0; j < n; ++j) xs(0, j) = (j + 0.5) / n;
  const PhaseEnsemble flat = PhaseEnsemble::uniform(xs, Matrix::Zero(1, n));
  CHECK(std::abs(energy(flat, PoissonMode{1.0, n})) < 1e-28);
}

TEST_CASE("kernel-mode energy is conserved") {
  std::mt19937_64 rng(5);
  const PhaseEnsemble e0 = oracle::random_uniform(300, 1, rng);
  SimConfig cfg;
  cfg.mode = KernelMode{KernelSpec::single_mode(1.0)};
  cfg.dt = 1e-3;
  cfg.t_end = 1.0;
  const PhaseEnsemble e1 = simulate(cfg, e0);
  const double E0 = energy(e0, cfg.mode), E1 = energy(e1, cfg.mode);
  CHECK(std::abs(E1 - E0) < 1e-6 * std::abs(E0));
  CHECK(e1.weights() == e0.weights());
}

TEST_CASE("SimConfig validation names the field") {
  SimConfig cfg;
  cfg.dt = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("sim.dt"), ConfigError);
  cfg = SimConfig{};
  cfg.mode = PoissonMode{1.5, 64};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("sim.eps"), ConfigError);
  cfg = SimConfig{};
  cfg.t_end = 0.0105;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("sim.t_end"), ConfigError);
  cfg = SimConfig{};
  cfg.integrator = "rk4";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SimConfig{};
  CHECK(cfg.steps() == 1000);
  CHECK(cfg.snap_stride() == 50);
}

TEST_CASE("paired trajectories") {
  std::mt19937_64 rng(6);
  const PhaseEnsemble mu = oracle::random_uniform(100, 1, rng);
  SimConfig cfg;
  cfg.dt = 1e-2;
  cfg.t_end = 1.0;
  cfg.snap_every = 0.1;

  SUBCASE("identical pair has D = E = 0") {
    cfg.mode = KernelMode{KernelSpec::single_mode(1.0)};
    const PairedTrajectory t = simulate_pair(cfg, mu, mu, Coupling::diagonal(mu));
    REQUIRE(t.times.size() == 11);
    for (const auto& d : t.diagnostics) {
      CHECK(d.D == 0.0);
      CHECK(d.E == 0.0);
    }
  }

  SUBCASE("velocity shift under free flow") {
    const double delta = 1e-3;
    const PhaseEnsemble nu = mu.with_state(mu.positions(), (mu.velocities().array() + delta).matrix());
    const PairedTrajectory t = simulate_pair(cfg, mu, nu, Coupling::index_paired(mu, nu));
    for (const auto& d : t.diagnostics) {
      CHECK(d.E == doctest::Approx(delta * delta / 2).epsilon(1e-9));
      CHECK(d.D == doctest::Approx(d.t * d.t * delta * delta / 2).epsilon(1e-6));
      CHECK(d.mean_dx == doctest::Approx(d.t * delta).epsilon(1e-6));
      CHECK(d.mean_shifted < 1e-12);
    }
    CHECK(t.diagnostics.front().D == 0.0);
  }

  SUBCASE("zero kernel matches free mode bit for bit") {
    const PhaseEnsemble nu = oracle::random_uniform(100, 1, rng);
    PairOptions o;
    o.store_snapshots = true;
    const PairedTrajectory a = simulate_pair(cfg, mu, nu, Coupling::index_paired(mu, nu), o);
    cfg.mode = KernelMode{KernelSpec::zero()};
    const PairedTrajectory b = simulate_pair(cfg, mu, nu, Coupling::index_paired(mu, nu), o);
    REQUIRE(a.first.size() == b.first.size());
    for (std::size_t k = 0; k < a.first.size(); ++k) {
      CHECK(a.first[k].positions() == b.first[k].positions());
      CHECK(a.second[k].velocities() == b.second[k].velocities());
    }
  }

  SUBCASE("initial diagnostics reproduce the coupling moments") {
    const PhaseEnsemble nu = oracle::random_uniform(100, 1, rng);
    const Coupling pi0 = Coupling::index_paired(mu, nu);
    const PairedTrajectory t = simulate_pair(cfg, mu, nu, pi0);
    double D = 0, E = 0;
    for (Index i = 0; i < 100; ++i) {
      const double dx = oracle::wrap(mu.positions()(0, i) - nu.positions()(0, i));
      const double dv = mu.velocities()(0, i) - nu.velocities()(0, i);
      D += 0.005 * dx * dx;
      E += 0.005 * dv * dv;
    }
    CHECK(std::abs(t.diagnostics[0].D - D) < 1e-12);
    CHECK(std::abs(t.diagnostics[0].E - E) < 1e-12);
  }

  SUBCASE("invalid coupling is rejected") {
    const PhaseEnsemble nu = oracle::random_uniform(50, 1, rng);
    CHECK_THROWS_AS(simulate_pair(cfg, mu, nu, Coupling::diagonal(mu)), StructuralError);
  }
}

TEST_CASE("plasma oscillation stays bounded") {
  // Cold beam with a single-mode density perturbation: under Vlasov-Poisson the
  // perturbation oscillates at the plasma frequency instead of growing.
  const int N = 20000, n = 64;
  const double alpha = 0.05;
  Matrix x(1, N);
  for (int j = 0; j < N; ++j) {
    // Invert the CDF of 1 + alpha cos(2 pi x) by Newton.
    const double u = (j + 0.5) / N;
    double y = u;
    for (int it = 0; it < 50; ++it) y -= (y + alpha * std::sin(kTwoPi * y) / kTwoPi - u) / (1 + alpha * std::cos(kTwoPi * y));
    x(0, j) = y;
  }
  PhaseEnsemble e = PhaseEnsemble::uniform(x, Matrix::Zero(1, N));
  const ForceModel model(PoissonMode{1.0, n});
  const ForceEval f = model.evaluator();
  auto amplitude = [&](const PhaseEnsemble& s) { return (deposit_density(s, n).values.array() - 1.0).abs().maxCoeff(); };
  const double a0 = amplitude(e);
  double amax = a0, amin = a0;
  for (int k = 1; k <= 200; ++k) {
    e = step(e, f, 1e-2);
    const double a = amplitude(e);
    amax = std::max(amax, a);
    amin = std::min(amin, a);
  }
  CHECK(amax < 1.5 * a0);
  CHECK(amin < 0.3 * a0);  // passes through a near-neutral state
}
