#include "doctest.h"
#include "oracles.hpp"

#include "kwass/assignment.hpp"
#include "kwass/errors.hpp"
#include "kwass/implicit_weight.hpp"
#include "kwass/transport.hpp"

#include <numeric>
#include <random>

using namespace kwass;

namespace {

PhaseEnsemble dirac(double x, double v) {
  Matrix xm(1, 1), vm(1, 1);
  xm << x;
  vm << v;
  return PhaseEnsemble::uniform(xm, vm);
}

}  // namespace

TEST_CASE("assignment matches brute force on random matrices") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 6;
    Eigen::MatrixXd c(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = u(rng);
    const auto a = solve_assignment(c);
    double got = 0;
    for (int i = 0; i < n; ++i) got += c(i, a[static_cast<std::size_t>(i)]);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double s = 0;
      for (int i = 0; i < n; ++i) s += c(i, perm[static_cast<std::size_t>(i)]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("assignment is deterministic on ties") {
  const Eigen::MatrixXd c = Eigen::MatrixXd::Ones(4, 4);
  const auto a = solve_assignment(c), b = solve_assignment(c);
  CHECK(a == b);
}

TEST_CASE("transportation problem reproduces marginals and brute-force optimum on a 2x2") {
  Eigen::MatrixXd c(2, 2);
  c << 0, 1, 1, 0;
  Eigen::VectorXd s(2), d(2);
  s << 0.5, 0.5;
  d << 0.7, 0.3;
  const auto flows = solve_transportation(c, s, d);
  double cost = 0, row0 = 0, col0 = 0;
  for (const auto& f : flows) {
    cost += f.mass * c(f.i, f.j);
    if (f.i == 0) row0 += f.mass;
    if (f.j == 0) col0 += f.mass;
  }
  CHECK(cost == doctest::Approx(0.2));
  CHECK(row0 == doctest::Approx(0.5));
  CHECK(col0 == doctest::Approx(0.7));
}

TEST_CASE("exact solver: identity, Diracs and capacity") {
  std::mt19937_64 rng(2);
  const PhaseEnsemble mu = oracle::random_uniform(8, 1, rng);
  const TransportResult self = solve_exact(mu, mu, CostSpec::plain(2));
  CHECK(self.value == 0.0);
  for (const auto& e : self.plan.entries) CHECK(e.i == e.j);

  const TransportResult two = solve_exact(dirac(0, 0), dirac(0.3, 0), CostSpec::plain(2));
  CHECK(two.value == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(two.raw_objective == doctest::Approx(0.09));

  ExactOptions small;
  small.capacity = 4;
  CHECK_THROWS_AS(solve_exact(mu, mu, CostSpec::plain(1), small), CapacityError);
}

TEST_CASE("exact solver matches permutation brute force for every cost variant") {
  std::mt19937_64 rng(3);
  const std::vector<std::pair<CostSpec, oracle::Cost>> specs = {
      {CostSpec::plain(1), {oracle::Cost::plain, 1}},
      {CostSpec::anisotropic(2, 10), {oracle::Cost::aniso, 2, 10}},
      {CostSpec::anisotropic(2, 1), {oracle::Cost::aniso, 2, 1}},
      {CostSpec::quadratic(3, 2, 0.5, 1), {oracle::Cost::quad, 3, 1, 2, 0.5, 1}},
      {CostSpec::shifted(1.5, 0.8), {oracle::Cost::shifted, 1.5, 1, 1, 0, 1, 0.8}},
  };
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 5;
    const PhaseEnsemble mu = oracle::random_uniform(n, 1 + trial % 2, rng);
    const PhaseEnsemble nu = oracle::random_uniform(n, 1 + trial % 2, rng);
    for (const auto& [spec, ref] : specs) {
      const TransportResult r = solve_exact(mu, nu, spec);
      CHECK(validate_coupling(r.plan, mu, nu).pass);
      CHECK(std::abs(r.raw_objective - oracle::brute_force_ot(mu, nu, ref)) < 1e-10);
      CHECK(r.value == doctest::Approx(std::pow(r.raw_objective, 1.0 / spec.p())).epsilon(1e-12));
    }
  }
}

TEST_CASE("exact solver with unequal weights goes through min-cost flow") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  const PhaseEnsemble a0 = oracle::random_uniform(5, 1, rng), b0 = oracle::random_uniform(3, 1, rng);
  Vector wa(5), wb(3);
  for (auto& w : wa) w = u(rng);
  for (auto& w : wb) w = u(rng);
  const PhaseEnsemble a(a0.positions(), a0.velocities(), wa), b(b0.positions(), b0.velocities(), wb);
  const TransportResult r = solve_exact(a, b, CostSpec::plain(1));
  CHECK(validate_coupling(r.plan, a, b).pass);
  // Any coupling is an upper bound, in particular the product coupling.
  CHECK(r.raw_objective <= plan_cost(Coupling::product(a, b), a, b, CostSpec::plain(1)) + 1e-15);
  // Matches an entropic solve with a small regularization.
  EntropicOptions eo;
  eo.eta = 1e-4;
  const TransportResult e = solve_entropic(a, b, CostSpec::plain(1), eo);
  CHECK(e.raw_objective == doctest::Approx(r.raw_objective).epsilon(1e-3));
}

TEST_CASE("min-cost flow matches brute force on rational weights") {
  // Weights in multiples of 1/6: splitting each particle into equal atoms
  // turns the problem into a uniform one the permutation oracle can solve.
  std::mt19937_64 rng(40);
  const std::vector<std::vector<int>> splits_a = {{1, 2, 3}, {2, 2, 1, 1}, {4, 1, 1}};
  const std::vector<std::vector<int>> splits_b = {{3, 3}, {1, 1, 4}, {5, 1}};
  for (int trial = 0; trial < 30; ++trial) {
    const auto& sa = splits_a[static_cast<std::size_t>(trial % 3)];
    const auto& sb = splits_b[static_cast<std::size_t>((trial / 3) % 3)];
    const PhaseEnsemble a0 = oracle::random_uniform(static_cast<int>(sa.size()), 1, rng);
    const PhaseEnsemble b0 = oracle::random_uniform(static_cast<int>(sb.size()), 1, rng);
    auto weighted = [](const PhaseEnsemble& e, const std::vector<int>& s) {
      Vector w(static_cast<Index>(s.size()));
      for (std::size_t k = 0; k < s.size(); ++k) w[static_cast<Index>(k)] = s[k];
      return PhaseEnsemble(e.positions(), e.velocities(), w);
    };
    auto atoms = [](const PhaseEnsemble& e, const std::vector<int>& s) {
      Matrix x(1, 6), v(1, 6);
      int c = 0;
      for (std::size_t k = 0; k < s.size(); ++k) {
        for (int r = 0; r < s[k]; ++r, ++c) {
          x(0, c) = e.positions()(0, static_cast<Index>(k));
          v(0, c) = e.velocities()(0, static_cast<Index>(k));
        }
      }
      return PhaseEnsemble::uniform(x, v);
    };
    const PhaseEnsemble a = weighted(a0, sa), b = weighted(b0, sb);
    const oracle::Cost ref{oracle::Cost::plain, trial % 2 ? 2.0 : 1.0};
    const TransportResult r = solve_exact(a, b, CostSpec::plain(ref.p));
    CHECK(validate_coupling(r.plan, a, b).pass);
    CHECK(std::abs(r.raw_objective - oracle::brute_force_ot(atoms(a0, sa), atoms(b0, sb), ref)) < 1e-12);
  }
}

TEST_CASE("entropic solver approaches the exact value") {
  const TransportResult two = solve_entropic(dirac(0, 0), dirac(0.3, 0), CostSpec::plain(2), {1e-3, 1e-9, 100000});
  CHECK(std::abs(two.value - 0.3) < 1e-3);

  std::mt19937_64 rng(5);
  const PhaseEnsemble mu = oracle::random_uniform(50, 1, rng), nu = oracle::random_uniform(50, 1, rng);
  const double exact = solve_exact(mu, nu, CostSpec::plain(1)).raw_objective;
  double prev = 1e300;
  for (double eta : {1e-1, 1e-2, 1e-3}) {
    EntropicOptions eo;
    eo.eta = eta;
    eo.tol = 1e-6;  // small eta converges slowly
    const TransportResult r = solve_entropic(mu, nu, CostSpec::plain(1), eo);
    CHECK(r.solver.converged);
    CHECK(r.solver.marginal_residual <= 1e-6);
    CHECK(r.raw_objective >= exact - 1e-5);
    CHECK(r.raw_objective <= prev + 1e-5);
    prev = r.raw_objective;
  }
  CHECK(prev - exact < 5e-3);

  const TransportResult self = solve_entropic(mu, mu, CostSpec::plain(1), {1e-3, 1e-9, 100000});
  CHECK(self.value < 0.05);
}

TEST_CASE("entropic solver reports non-convergence") {
  std::mt19937_64 rng(6);
  const PhaseEnsemble mu = oracle::random_uniform(30, 1, rng), nu = oracle::random_uniform(30, 1, rng);
  const TransportResult r = solve_entropic(mu, nu, CostSpec::plain(1), {1e-4, 1e-14, 3});
  CHECK_FALSE(r.solver.converged);
}

TEST_CASE("Wasserstein metric properties") {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 200; ++k) {
    const PhaseEnsemble a = oracle::random_uniform(10, 1, rng), b = oracle::random_uniform(10, 1, rng),
                        c = oracle::random_uniform(10, 1, rng);
    const CostSpec s = CostSpec::plain(k % 2 ? 1.0 : 2.0);
    const double ab = wasserstein(a, b, s), ba = wasserstein(b, a, s), bc = wasserstein(b, c, s),
                 ac = wasserstein(a, c, s);
    CHECK(std::abs(ab - ba) < 1e-10);
    CHECK(ac <= ab + bc + 1e-8);
  }
}

TEST_CASE("generalized distances: lambda monotonicity, zero shift, velocity-free shift") {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 20; ++k) {
    const PhaseEnsemble a = oracle::random_uniform(12, 1, rng), b = oracle::random_uniform(12, 1, rng);
    double prev = 0;
    for (double lambda : {0.1, 0.5, 1.0, 2.0, 10.0, 100.0}) {
      const double raw = solve_exact(a, b, CostSpec::anisotropic(2, lambda)).raw_objective;
      CHECK(raw >= prev - 1e-14);
      prev = raw;
    }
    CHECK(wasserstein(a, b, CostSpec::shifted(1.5, 0)) == wasserstein(a, b, CostSpec::plain(1.5)));
    CHECK(wasserstein(a, a, CostSpec::anisotropic(3, 7)) == 0.0);

    const PhaseEnsemble a0 = a.with_state(a.positions(), Matrix::Zero(1, 12));
    const PhaseEnsemble b0 = b.with_state(b.positions(), Matrix::Zero(1, 12));
    const double base = wasserstein(a0, b0, CostSpec::plain(2));
    for (double t : {0.3, 1.0, 4.0}) CHECK(wasserstein(a0, b0, CostSpec::shifted(2, t)) == doctest::Approx(base));
  }
}

TEST_CASE("wasserstein falls back to the entropic solver above capacity") {
  std::mt19937_64 rng(9);
  const PhaseEnsemble a = oracle::random_uniform(20, 1, rng), b = oracle::random_uniform(20, 1, rng);
  WassersteinOptions o;
  o.exact.capacity = 10;
  o.entropic.eta = 1e-4;
  const TransportResult r = transport(a, b, CostSpec::plain(1), o);
  CHECK(r.solver.kind == SolverInfo::Kind::entropic);
  CHECK(r.value == doctest::Approx(wasserstein(a, b, CostSpec::plain(1))).epsilon(2e-3));
}

TEST_CASE("Kantorovich lower bound") {
  const PhaseEnsemble a = dirac(0, 0), b = dirac(0.3, 0);
  CHECK(kantorovich_lower_bound(a, b, [](const auto&, const auto&) { return 4.2; }).value == 0.0);

  const TestFunction dist_to_b = [](const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& v) {
    Vector p(1);
    p << 0.3;
    return torus_distance(x, p) + v.cwiseAbs().sum();
  };
  CHECK(kantorovich_lower_bound(a, b, dist_to_b).value == doctest::Approx(0.3));

  const TestFunction steep = [](const Eigen::Ref<const Vector>&, const Eigen::Ref<const Vector>& v) {
    return 2.0 * v[0];
  };
  CHECK_THROWS_AS(kantorovich_lower_bound(dirac(0, 0), dirac(0, 1), steep), DomainError);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const PhaseEnsemble mu = oracle::random_uniform(8, 1, rng), nu = oracle::random_uniform(8, 1, rng);
    // Sum of sines with total Lipschitz constant sum |c_m| 2 pi m / (2 pi m) <= 1 in x, plus a
    // 1-Lipschitz clipped term in v scaled to keep the total at most 1.
    const double c1 = 0.3 * u(rng), c2 = 0.2 * u(rng), c3 = 0.5 * u(rng);
    const TestFunction psi = [=](const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& v) {
      const double tp = 2 * M_PI;
      return c1 * std::sin(tp * x[0]) / tp + c2 * std::sin(2 * tp * x[0]) / (2 * tp) +
             c3 * std::clamp(v[0], -1.0, 1.0);
    };
    const KantorovichBound kb = kantorovich_lower_bound(mu, nu, psi);
    CHECK(kb.empirical_lipschitz <= 1.0 + 1e-9);
    CHECK(kb.value <= solve_exact(mu, nu, CostSpec::plain(1)).value + 1e-12);
  }
}

TEST_CASE("weight functions") {
  const WeightFunction lw = WeightFunction::log_eps(0.5);
  CHECK(lw(std::exp(-2.0)) == doctest::Approx(8.0));
  CHECK_THROWS_AS(lw(0.0), DomainError);
  CHECK_THROWS_AS(lw(1.5), DomainError);

  const WeightFunction cw = WeightFunction::capped_phi(1.0);
  const double s0 = std::exp(-1.0);
  CHECK(cw(s0) == doctest::Approx(1.0));
  CHECK(cw(std::nextafter(s0, 1.0)) == doctest::Approx(1.0));
  const double h = 1e-7;
  const double left = (cw(s0) - cw(s0 - h)) / h, right = (cw(s0 + h) - cw(s0)) / h;
  CHECK(std::abs(left - right) < 1e-5);
  CHECK(std::abs(cw.derivative(s0) - (-std::exp(1.0))) < 1e-9);
  CHECK(cw(5.0) == doctest::Approx(1.0 / (std::exp(1.0) * 5.0)));
  for (double s = 0.01; s < 3.0; s += 0.01) CHECK(cw(s + 0.01) < cw(s));
  CHECK_THROWS_AS(WeightFunction::log_eps(0.0), std::invalid_argument);
}

TEST_CASE("implicit weight solve") {
  const WeightFunction w = WeightFunction::log_eps(1.0);
  CHECK(implicit_weight_solve(0.0, 0.2, w).q == 0.2);
  const ImplicitSolution zero = implicit_weight_solve(0.0, 0.0, w);
  CHECK(zero.q == 0.0);
  CHECK(zero.degenerate);

  const double ref = oracle::bisect_implicit(0.01, 0.1, [](double q) { return oracle::phi_log(q, 1.0); }, 0.1, 1.0);
  const ImplicitSolution s = implicit_weight_solve(0.01, 0.1, w);
  CHECK(std::abs(s.q - ref) < 1e-14);
  CHECK(s.residual < 1e-12);

  CHECK_THROWS_AS(implicit_weight_solve(0.5, 1.5, w), NoRootError);
  CHECK_THROWS_AS(implicit_weight_solve(0.5, 1.0, w), NoRootError);

  const WeightFunction cw = WeightFunction::capped_phi(1.0);
  const ImplicitSolution c = implicit_weight_solve(0.5, 1.5, cw);
  const double cref = oracle::bisect_implicit(0.5, 1.5, [](double q) { return oracle::phi_capped(q, 1.0); }, 1.5, 10.0);
  CHECK(std::abs(c.q - cref) < 1e-13);
  CHECK(c.residual < 1e-12 * 1.5);

  // Root with s = 0 and r > 0 for capped_phi.
  const ImplicitSolution c0 = implicit_weight_solve(0.3, 0.0, cw);
  CHECK(c0.q > 0.0);
  CHECK(c0.residual < 1e-12);

  CHECK_THROWS_AS(implicit_weight_solve(-1.0, 0.1, w), std::invalid_argument);
}

TEST_CASE("implicit solve is increasing in both moments") {
  // q - Phi(q) r = s with Phi > 0 decreasing: d q / d r = Phi(q) / (1 - Phi'(q) r) > 0.
  const WeightFunction w = WeightFunction::log_eps(0.7);
  for (double r : {1e-6, 1e-3, 0.05, 0.3}) {
    double prev = 0;
    for (double s = 0.01; s < 0.99; s += 0.02) {
      const double q = implicit_weight_solve(r, s, w).q;
      CHECK(q > prev);
      prev = q;
    }
  }
  for (double s : {1e-8, 0.1, 0.5, 0.9}) {
    double prev = s;
    for (double r = 1e-4; r < 1.0; r *= 2) {
      const double q = implicit_weight_solve(r, s, w).q;
      CHECK(q > prev);
      prev = q;
    }
  }
}

TEST_CASE("nonlinear distance") {
  const WeightFunction w = WeightFunction::log_eps(1.0);
  std::mt19937_64 rng(11);
  const PhaseEnsemble mu = oracle::random_uniform(5, 1, rng);
  const NonlinearResult same = nonlinear_wasserstein(mu, mu, 2, w);
  CHECK(same.value == 0.0);
  CHECK(same.degenerate);

  const NonlinearResult vonly = nonlinear_wasserstein(dirac(0.2, 0.1), dirac(0.2, 0.4), 2, w);
  CHECK(vonly.value == doctest::Approx(0.09).epsilon(1e-14));

  for (int trial = 0; trial < 10; ++trial) {
    Matrix x(1, 4), v(1, 4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> sv(-0.2, 0.2);
    for (int j = 0; j < 4; ++j) {
      x(0, j) = u(rng);
      v(0, j) = sv(rng);
    }
    const PhaseEnsemble a = PhaseEnsemble::uniform(x, v);
    for (int j = 0; j < 4; ++j) {
      x(0, j) = u(rng);
      v(0, j) = sv(rng);
    }
    const PhaseEnsemble b = PhaseEnsemble::uniform(x, v);
    const NonlinearResult r = nonlinear_wasserstein(a, b, 2, w);
    CHECK(r.brute_force);
    CHECK(validate_coupling(r.plan, a, b).pass);
    // Independent permutation sweep composed with the bisection oracle.
    std::vector<int> perm{0, 1, 2, 3};
    double best = 1e300;
    do {
      double rx = 0, sv2 = 0;
      for (int i = 0; i < 4; ++i) {
        const double dx = oracle::wrap(a.positions()(0, i) - b.positions()(0, perm[static_cast<std::size_t>(i)]));
        const double dv = a.velocities()(0, i) - b.velocities()(0, perm[static_cast<std::size_t>(i)]);
        rx += 0.25 * dx * dx;
        sv2 += 0.25 * dv * dv;
      }
      const double q = rx == 0 ? sv2
                               : oracle::bisect_implicit(rx, sv2, [](double z) { return oracle::phi_log(z, 1.0); },
                                                         std::max(sv2, 1e-300), 1.0);
      best = std::min(best, q);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(r.value <= best * (1 + 1e-12));
    CHECK(r.value >= best * (1 - 1e-12));
    CHECK(r.lambda_star == doctest::Approx(w(r.value)));
  }
}

TEST_CASE("coupling distance of a fixed plan") {
  const PhaseEnsemble a = dirac(0.0, 0.0), b = dirac(0.1, 0.2);
  const Coupling c = Coupling::diagonal(a);
  const CouplingMoments m = coupling_moments(c, a, b, 2);
  CHECK(m.position == doctest::Approx(0.01));
  CHECK(m.velocity == doctest::Approx(0.04));
  const ImplicitSolution q = coupling_distance(c, a, b, 2, WeightFunction::log_eps(1));
  CHECK(q.q - std::abs(std::log(q.q)) * 0.01 == doctest::Approx(0.04).epsilon(1e-12));
  CHECK_THROWS_AS(coupling_distance(c, a, dirac(0, 1.5), 2, WeightFunction::log_eps(1)), NoRootError);
}

TEST_CASE("bootstrap sigma") {
  std::mt19937_64 rng(12);
  const PhaseEnsemble a = oracle::random_uniform(200, 1, rng);
  const PhaseEnsemble shifted = a.with_state(a.positions(), (a.velocities().array() + 0.01).matrix());
  const Coupling d = Coupling::diagonal(a);
  // Every pair has the same cost: no spread.
  CHECK(bootstrap_sigma(d, a, shifted, CostSpec::plain(1)) < 1e-15);
  const PhaseEnsemble b = oracle::random_uniform(200, 1, rng);
  const TransportResult r = solve_exact(a, b, CostSpec::plain(1));
  const double s1 = bootstrap_sigma(r.plan, a, b, CostSpec::plain(1), 200, 1);
  CHECK(s1 > 0.0);
  CHECK(s1 < 0.2 * r.value);
  CHECK(s1 == bootstrap_sigma(r.plan, a, b, CostSpec::plain(1), 200, 1));
}
