#pragma once

#include "kwass/implicit_weight.hpp"
#include "kwass/measures.hpp"

#include <cstdint>
#include <functional>
#include <optional>

namespace kwass {

struct SolverInfo {
  enum class Kind { exact, entropic };
  Kind kind = Kind::exact;
  double eta = 0.0;
  int iterations = 0;
  double marginal_residual = 0.0;
  bool converged = true;
};

struct TransportResult {
  Coupling plan;
  double value = 0.0;          // raw_objective^(1/p)
  double raw_objective = 0.0;  // transported cost, not rooted
  SolverInfo solver;
};

struct ExactOptions {
  Index capacity = 5000;  // max particles per side
};

/// Exact discrete optimal transport. Equal-size uniform ensembles go through
/// the assignment solver; everything else through min-cost flow.
/// Throws CapacityError when either side exceeds options.capacity.
TransportResult solve_exact(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                            const ExactOptions& options = {});

struct EntropicOptions {
  double eta = 1e-3;  // regularization, absolute cost units
  double tol = 1e-9;  // max abs marginal residual
  int max_iter = 100000;
};

/// Log-domain Sinkhorn with eta annealing. The dense plan is truncated below
/// 1e-15 and renormalized. When max_iter is hit the result carries
/// solver.converged == false.
TransportResult solve_entropic(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                               const EntropicOptions& options = {});

struct WassersteinOptions {
  ExactOptions exact;
  EntropicOptions entropic;
};

/// Distance for any cost variant: exact when within capacity, entropic above.
/// Throws NumericalError if the entropic fallback does not converge.
TransportResult transport(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                          const WassersteinOptions& options = {});
double wasserstein(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                   const WassersteinOptions& options = {});

/// Transported cost sum_k m_k c(i_k, j_k) of a given plan.
double plan_cost(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec);

// ---------------------------------------------------------------------------

using TestFunction = std::function<double(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& v)>;

struct KantorovichOptions {
  std::size_t lipschitz_pairs = 4000;  // sampled when the support has more pairs
  std::uint64_t seed = 7;
};

struct KantorovichBound {
  double value = 0.0;                // int psi d(mu - nu)
  double empirical_lipschitz = 0.0;  // max |psi(a)-psi(b)| / d1(a,b) over checked pairs
};

/// Dual lower bound int psi d(mu - nu) <= W_1(mu, nu) for a 1-Lipschitz psi
/// w.r.t. |dx|_torus + |dv|. Rejects (DomainError) test functions whose
/// empirical Lipschitz constant on the union of supports exceeds 1 + 1e-9.
KantorovichBound kantorovich_lower_bound(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const TestFunction& psi,
                                         const KantorovichOptions& options = {});

// ---------------------------------------------------------------------------

struct CouplingMoments {
  double position = 0.0;  // int |dx|^p d pi
  double velocity = 0.0;  // int |dv|^p d pi
};

CouplingMoments coupling_moments(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, double p);

/// D_p(pi, Phi): the implicit distance of a fixed coupling. Throws NoRootError
/// when it is undefined (log_eps with velocity moment >= 1).
ImplicitSolution coupling_distance(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, double p,
                                   const WeightFunction& w);

struct NonlinearOptions {
  double tol = 1e-12;           // on successive D values, relative to max(1, D)
  int max_outer = 50;
  Index brute_force_max = 6;    // enumerate all permutations up to this size
  ExactOptions exact;
};

struct NonlinearResult {
  double value = 0.0;        // D_p of the best coupling found; upper bound on W_{Phi,p}^p
  Coupling plan;
  double lambda_star = 0.0;  // Phi(value)
  bool converged = false;    // fixed point reached
  bool degenerate = false;   // value 0 (identical measures)
  bool brute_force = false;  // permutation enumeration was used
  int iterations = 0;
};

/// Upper bound on W_{Phi,p}(mu,nu)^p by alternating between an anisotropic
/// OT solve at fixed lambda and lambda <- Phi(D_p(plan)). For equal-size
/// uniform ensembles of at most brute_force_max points every permutation is
/// also evaluated and the minimum returned.
NonlinearResult nonlinear_wasserstein(const PhaseEnsemble& mu, const PhaseEnsemble& nu, double p,
                                      const WeightFunction& w, const NonlinearOptions& options = {});

// ---------------------------------------------------------------------------

/// Bootstrap standard deviation of the distance value of a plan, resampling
/// its matched pairs with probability proportional to their mass.
double bootstrap_sigma(const Coupling& plan, const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec,
                       int resamples = 200, std::uint64_t seed = 1);

}  // namespace kwass
