#include "kwass/transport.hpp"

#include "kwass/assignment.hpp"
#include "kwass/errors.hpp"
#include "kwass/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace kwass {

namespace {

constexpr double kTruncate = 1e-15;

double root(double raw, double p) { return raw <= 0.0 ? 0.0 : (p == 1.0 ? raw : std::pow(raw, 1.0 / p)); }

void require_nonempty(const PhaseEnsemble& mu, const PhaseEnsemble& nu) {
  if (mu.empty() || nu.empty()) throw std::invalid_argument("transport: empty ensemble");
  if (mu.dim() != nu.dim()) throw std::invalid_argument("transport: ensembles differ in dimension");
}

double raw_cost(const Coupling& plan, const Matrix& cost) {
  double total = 0.0;
  for (const auto& e : plan.entries) total += e.mass * cost(e.i, e.j);
  return total;
}

// Max absolute deviation of the plan's marginals from the ensemble weights.
double marginal_residual(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu) {
  Vector rows = Vector::Zero(mu.size());
  Vector cols = Vector::Zero(nu.size());
  for (const auto& e : plan.entries) {
    rows[e.i] += e.mass;
    cols[e.j] += e.mass;
  }
  return std::max((rows - mu.weights()).cwiseAbs().maxCoeff(), (cols - nu.weights()).cwiseAbs().maxCoeff());
}

// log sum_k exp(z_k), stable for large negative arguments.
template <typename F>
double log_sum_exp(Index n, F&& term) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < n; ++k) mx = std::max(mx, term(k));
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Index k = 0; k < n; ++k) s += std::exp(term(k) - mx);
  return mx + std::log(s);
}

}  // namespace

TransportResult solve_exact(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                            const ExactOptions& options) {
  require_nonempty(mu, nu);
  if (mu.size() > options.capacity || nu.size() > options.capacity) {
    throw CapacityError("exact transport limited to " + std::to_string(options.capacity) +
                        " points per side; use the entropic solver");
  }
  const Matrix cost = cost_matrix(mu, nu, spec);
  TransportResult out;
  out.plan.source_size = mu.size();
  out.plan.target_size = nu.size();

  if (mu.size() == nu.size() && mu.has_uniform_weights() && nu.has_uniform_weights()) {
    const auto match = solve_assignment(cost);
    out.plan.entries.reserve(match.size());
    for (Index i = 0; i < mu.size(); ++i) out.plan.entries.push_back({i, match[static_cast<std::size_t>(i)], mu.weights()[i]});
  } else {
    for (const auto& f : solve_transportation(cost, mu.weights(), nu.weights())) {
      if (f.mass > 0.0) out.plan.entries.push_back({f.i, f.j, f.mass});
    }
  }
  out.raw_objective = raw_cost(out.plan, cost);
  out.value = root(out.raw_objective, spec.p());
  out.solver.kind = SolverInfo::Kind::exact;
  out.solver.marginal_residual = marginal_residual(out.plan, mu, nu);
  return out;
}

TransportResult solve_entropic(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                               const EntropicOptions& options) {
  require_nonempty(mu, nu);
  if (!(options.eta > 0.0)) throw std::invalid_argument("solve_entropic: eta must be > 0");
  if (!(options.tol > 0.0)) throw std::invalid_argument("solve_entropic: tol must be > 0");
  if (options.max_iter < 1) throw std::invalid_argument("solve_entropic: max_iter must be >= 1");

  const Index n = mu.size();
  const Index m = nu.size();
  const Matrix cost = cost_matrix(mu, nu, spec);
  const Matrix cost_t = cost.transpose();  // column access for the row update
  const Vector log_a = mu.weights().array().log();
  const Vector log_b = nu.weights().array().log();
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);

  auto update_f = [&](double eta) {
    parallel::parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
      for (auto i = static_cast<Index>(lo); i < static_cast<Index>(hi); ++i) {
        const double* c = cost_t.col(i).data();
        f[i] = -eta * log_sum_exp(m, [&](Index j) { return (g[j] - c[j]) / eta + log_b[j]; });
      }
    });
  };
  auto update_g = [&](double eta) {
    parallel::parallel_for(static_cast<std::size_t>(m), [&](std::size_t lo, std::size_t hi) {
      for (auto j = static_cast<Index>(lo); j < static_cast<Index>(hi); ++j) {
        const double* c = cost.col(j).data();
        g[j] = -eta * log_sum_exp(n, [&](Index i) { return (f[i] - c[i]) / eta + log_a[i]; });
      }
    });
  };
  // After a g update the column marginals are exact; measure the rows.
  auto row_residual = [&](double eta) {
    Vector res(n);
    parallel::parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
      for (auto i = static_cast<Index>(lo); i < static_cast<Index>(hi); ++i) {
        const double* c = cost_t.col(i).data();
        const double lse = log_sum_exp(m, [&](Index j) { return (f[i] + g[j] - c[j]) / eta + log_b[j]; });
        res[i] = std::abs(std::exp(log_a[i] + lse) - std::exp(log_a[i]));
      }
    });
    return res.maxCoeff();
  };

  // Anneal from a coarse regularization down to the requested one.
  std::vector<double> schedule;
  for (double e = std::max(options.eta, 0.25 * cost.maxCoeff()); e > options.eta; e *= 0.25) schedule.push_back(e);
  schedule.push_back(options.eta);

  TransportResult out;
  out.solver.kind = SolverInfo::Kind::entropic;
  out.solver.eta = options.eta;
  int iter = 0;
  double residual = std::numeric_limits<double>::infinity();
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const double eta = schedule[stage];
    const bool last = stage + 1 == schedule.size();
    const double stage_tol = last ? options.tol : std::max(options.tol, 1e-6);
    residual = std::numeric_limits<double>::infinity();
    while (iter < options.max_iter) {
      update_f(eta);
      update_g(eta);
      ++iter;
      if (iter % 5 == 0 || iter == options.max_iter) {
        residual = row_residual(eta);
        if (residual <= stage_tol) break;
      }
    }
    if (iter >= options.max_iter) break;
  }

  const double eta = options.eta;
  out.plan.source_size = n;
  out.plan.target_size = m;
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      const double mass = std::exp((f[i] + g[j] - cost(i, j)) / eta + log_a[i] + log_b[j]);
      if (mass >= kTruncate) {
        out.plan.entries.push_back({i, j, mass});
        total += mass;
      }
    }
  }
  if (!(total > 0.0)) throw NumericalError("solve_entropic: plan vanished after truncation");
  for (auto& e : out.plan.entries) e.mass /= total;

  out.raw_objective = raw_cost(out.plan, cost);
  out.value = root(out.raw_objective, spec.p());
  out.solver.iterations = iter;
  out.solver.marginal_residual = marginal_residual(out.plan, mu, nu);
  out.solver.converged = residual <= options.tol;
  return out;
}

TransportResult transport(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                          const WassersteinOptions& options) {
  if (mu.size() <= options.exact.capacity && nu.size() <= options.exact.capacity) {
    return solve_exact(mu, nu, spec, options.exact);
  }
  TransportResult r = solve_entropic(mu, nu, spec, options.entropic);
  if (!r.solver.converged) {
    throw NumericalError("entropic transport did not converge in " + std::to_string(r.solver.iterations) +
                         " iterations (marginal residual " + std::to_string(r.solver.marginal_residual) + ")");
  }
  return r;
}

double wasserstein(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                   const WassersteinOptions& options) {
  return transport(mu, nu, spec, options).value;
}

double plan_cost(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec) {
  double total = 0.0;
  for (const auto& e : plan.entries) total += e.mass * phase_cost(mu, e.i, nu, e.j, spec);
  return total;
}

// ---------------------------------------------------------------------------

KantorovichBound kantorovich_lower_bound(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const TestFunction& psi,
                                         const KantorovichOptions& options) {
  require_nonempty(mu, nu);
  const Index n = mu.size();
  const Index total = n + nu.size();
  const Index d = mu.dim();
  Matrix xs(d, total), vs(d, total);
  xs << mu.positions(), nu.positions();
  vs << mu.velocities(), nu.velocities();

  Vector values(total);
  for (Index k = 0; k < total; ++k) {
    values[k] = psi(xs.col(k), vs.col(k));
    if (!std::isfinite(values[k])) throw NumericalError("kantorovich_lower_bound: test function is not finite");
  }

  KantorovichBound out;
  auto check = [&](Index a, Index b) {
    const double dist = torus_distance(xs.col(a), xs.col(b)) + (vs.col(a) - vs.col(b)).norm();
    if (dist <= 0.0) return;
    out.empirical_lipschitz = std::max(out.empirical_lipschitz, std::abs(values[a] - values[b]) / dist);
  };
  const auto all_pairs = static_cast<std::size_t>(total) * static_cast<std::size_t>(total - 1) / 2;
  if (all_pairs <= options.lipschitz_pairs) {
    for (Index a = 0; a < total; ++a) {
      for (Index b = a + 1; b < total; ++b) check(a, b);
    }
  } else {
    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<Index> pick(0, total - 1);
    for (std::size_t k = 0; k < options.lipschitz_pairs; ++k) check(pick(rng), pick(rng));
  }
  if (out.empirical_lipschitz > 1.0 + 1e-9) {
    throw DomainError("kantorovich_lower_bound: test function has empirical Lipschitz constant " +
                      std::to_string(out.empirical_lipschitz) + " > 1");
  }
  out.value = mu.weights().dot(values.head(n)) - nu.weights().dot(values.tail(nu.size()));
  return out;
}

// ---------------------------------------------------------------------------

CouplingMoments coupling_moments(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("coupling_moments: p must be >= 1");
  CouplingMoments out;
  for (const auto& e : plan.entries) {
    const double dx = torus_distance(mu.positions().col(e.i), nu.positions().col(e.j));
    const double dv = (mu.velocities().col(e.i) - nu.velocities().col(e.j)).norm();
    out.position += e.mass * std::pow(dx, p);
    out.velocity += e.mass * std::pow(dv, p);
  }
  return out;
}

ImplicitSolution coupling_distance(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, double p,
                                   const WeightFunction& w) {
  const CouplingMoments m = coupling_moments(plan, mu, nu, p);
  return implicit_weight_solve(m.position, m.velocity, w);
}

namespace {

// Implicit distance of a plan, +inf when undefined.
double try_distance(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, double p,
                    const WeightFunction& w, bool* degenerate) {
  try {
    const ImplicitSolution s = coupling_distance(plan, mu, nu, p, w);
    if (degenerate) *degenerate = s.degenerate;
    return s.q;
  } catch (const NoRootError&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

NonlinearResult nonlinear_wasserstein(const PhaseEnsemble& mu, const PhaseEnsemble& nu, double p,
                                      const WeightFunction& w, const NonlinearOptions& options) {
  require_nonempty(mu, nu);
  NonlinearResult out;
  out.value = std::numeric_limits<double>::infinity();

  auto consider = [&](const Coupling& plan) {
    bool degenerate = false;
    const double q = try_distance(plan, mu, nu, p, w, &degenerate);
    if (q < out.value) {
      out.value = q;
      out.plan = plan;
      out.degenerate = degenerate || q == 0.0;
    }
    return q;
  };

  Coupling plan = solve_exact(mu, nu, CostSpec::plain(p), options.exact).plan;
  double q = consider(plan);
  for (int it = 0; it < options.max_outer && std::isfinite(q) && q > 0.0; ++it) {
    out.iterations = it + 1;
    const double lambda = w(q);
    plan = solve_exact(mu, nu, CostSpec::anisotropic(p, std::max(lambda, 1e-300)), options.exact).plan;
    const double next = consider(plan);
    if (std::abs(next - q) <= options.tol * std::max(1.0, q)) {
      out.converged = true;
      break;
    }
    q = next;
  }
  if (q == 0.0) out.converged = true;

  if (mu.size() == nu.size() && mu.size() <= options.brute_force_max && mu.has_uniform_weights() &&
      nu.has_uniform_weights()) {
    out.brute_force = true;
    std::vector<Index> perm(static_cast<std::size_t>(mu.size()));
    std::iota(perm.begin(), perm.end(), Index{0});
    do {
      Coupling c;
      c.source_size = c.target_size = mu.size();
      for (Index i = 0; i < mu.size(); ++i) c.entries.push_back({i, perm[static_cast<std::size_t>(i)], mu.weights()[i]});
      consider(c);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }

  if (!std::isfinite(out.value)) {
    throw NoRootError("nonlinear_wasserstein: implicit distance undefined for every coupling tried");
  }
  out.lambda_star = out.value > 0.0 ? w(out.value) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------

double bootstrap_sigma(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                       int resamples, std::uint64_t seed) {
  if (resamples < 2) throw std::invalid_argument("bootstrap_sigma: need at least two resamples");
  const std::size_t k = plan.entries.size();
  if (k == 0) return 0.0;
  std::vector<double> cost(k), mass(k);
  for (std::size_t e = 0; e < k; ++e) {
    cost[e] = phase_cost(mu, plan.entries[e].i, nu, plan.entries[e].j, spec);
    mass[e] = plan.entries[e].mass;
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(mass.begin(), mass.end());
  std::vector<double> values(static_cast<std::size_t>(resamples));
  for (auto& value : values) {
    double sum = 0.0;
    for (std::size_t s = 0; s < k; ++s) sum += cost[pick(rng)];
    value = root(sum / static_cast<double>(k), spec.p());
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(resamples);
  double var = 0.0;
  for (double value : values) var += (value - mean) * (value - mean);
  return std::sqrt(var / static_cast<double>(resamples - 1));
}

}  // namespace kwass
