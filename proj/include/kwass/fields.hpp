#pragma once

#include "kwass/measures.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kwass {

// ---------------------------------------------------------------------------
// Interaction kernels for the smooth Vlasov force F = grad K * rho.

/// Interaction kernel given through its gradient, with B = sup |D^2 K|.
///
/// Registry kernels (zero, single_mode, sum_of_modes) are separable Fourier
/// series, grad_i K(x) = sum_k c_k sin(2 pi k x_i) / (2 pi k), and also carry
/// K itself. They allow an O(N * modes) force evaluation.
class KernelSpec {
 public:
  using Gradient = std::function<void(const double* dx, double* out, int d)>;
  using Potential = std::function<double(const double* dx, int d)>;

  static KernelSpec zero();
  /// grad_i K(x) = B sin(2 pi x_i) / (2 pi).
  static KernelSpec single_mode(double B);
  /// grad_i K(x) = sum_k c_k sin(2 pi k x_i) / (2 pi k), k = 1..len(c); B = sum |c_k|.
  static KernelSpec sum_of_modes(std::vector<double> coefficients);
  /// Arbitrary kernel; the caller certifies hessian_bound. potential may be empty.
  static KernelSpec custom(Gradient gradient, double hessian_bound, Potential potential = {});

  const std::string& name() const { return name_; }
  double hessian_bound() const { return B_; }
  bool is_zero() const { return zero_; }
  bool has_potential() const { return static_cast<bool>(potential_) || modes_.has_value(); }
  /// Fourier coefficients c_k of a registry kernel.
  const std::optional<std::vector<double>>& modes() const { return modes_; }

  /// grad K at a minimal-image displacement.
  Vector gradient(const Eigen::Ref<const Vector>& dx) const;
  /// K at a displacement; throws DomainError when no potential is known.
  double potential(const Eigen::Ref<const Vector>& dx) const;

 private:
  std::string name_;
  double B_ = 0.0;
  bool zero_ = false;
  Gradient gradient_;
  Potential potential_;
  std::optional<std::vector<double>> modes_;
};

/// Max |grad K(a) - grad K(b)| / |a - b|_torus over random pairs.
double empirical_gradient_lipschitz(const KernelSpec& kernel, int d, std::size_t pairs, std::uint64_t seed);

/// F(x) = sum_j w_j grad K(x - x_j), exact pairwise sum.
Vector kernel_force(const PhaseEnsemble& ens, const KernelSpec& kernel, const Eigen::Ref<const Vector>& x);

/// Force at every particle of ens (d x N). Registry kernels use their modal
/// expansion; custom kernels the pairwise sum. Deterministic for any thread count.
Matrix kernel_forces(const PhaseEnsemble& ens, const KernelSpec& kernel);
/// Same, always by the O(N^2) pairwise sum.
Matrix kernel_forces_pairwise(const PhaseEnsemble& ens, const KernelSpec& kernel);

/// 1/2 sum_ij w_i w_j K(x_i - x_j).
double kernel_pair_energy(const PhaseEnsemble& ens, const KernelSpec& kernel);

// ---------------------------------------------------------------------------
// Grids on the unit torus. Node k sits at the cell centre (k + 1/2)/n; flat
// storage is i0 + n i1 + n^2 i2.

struct TorusGrid {
  int n = 0;
  int d = 0;
  Vector values;

  TorusGrid() = default;
  TorusGrid(int n, int d);
  TorusGrid(int n, int d, double fill);

  Index size() const { return values.size(); }
  double mean() const { return values.mean(); }
  /// Coordinates of node `flat`.
  Vector node(Index flat) const;
  /// Grid sampling of f at the nodes.
  static TorusGrid sample(int n, int d, const std::function<double(const Eigen::Ref<const Vector>&)>& f);
};

/// Cloud-in-cell deposition. Values are a density with grid mean 1
/// (each particle contributes w_i n^d split linearly over 2^d nodes).
TorusGrid deposit_density(const PhaseEnsemble& ens, int n);

/// Linear interpolation of a grid at x (same kernel as the deposit).
double interpolate(const TorusGrid& grid, const Eigen::Ref<const Vector>& x);

struct FieldSolution {
  TorusGrid potential;           // U, zero mean
  std::vector<TorusGrid> field;  // E = -grad U, one grid per dimension
  double eps = 1.0;
  double mean_deviation = 0.0;   // mean(rho) - 1 before neutralization
  bool neutrality_warning = false;  // |mean_deviation| > 1e-6
};

/// Spectral solve of -eps^2 Lap U = rho - mean(rho) with zero-mean U and
/// E = -grad U. Throws std::invalid_argument for eps <= 0, NumericalError on NaN.
FieldSolution poisson_solve(const TorusGrid& rho, double eps);

/// max |-eps^2 Lap U - (rho - mean rho)| over the nodes, Laplacian taken spectrally.
double spectral_residual(const FieldSolution& sol, const TorusGrid& rho);

/// E at each particle (d x N) by linear interpolation.
Matrix gather_field(const FieldSolution& sol, const PhaseEnsemble& ens);

/// (eps^2/2) int |grad U|^2 by grid quadrature.
double field_energy(const FieldSolution& sol);

/// Discrete curl max norm for d >= 2 (spectral derivatives); 0 for d == 1.
double field_curl_max(const FieldSolution& sol);

struct LoeperCheck {
  double lhs = 0.0;  // eps^2 |grad Psi1 - grad Psi2|_L2
  double rhs = 0.0;  // sqrt(max |rho_i|_inf) W_2(rho1, rho2)
  double w2 = 0.0;
  bool pass = false;
};

/// Field-difference estimate with a 5% discretization allowance. W_2 of the
/// two densities is computed exactly on cell-centre ensembles.
LoeperCheck verify_loeper_L2(const TorusGrid& rho1, const TorusGrid& rho2, double eps);

struct LogLipschitzEstimate {
  double constant = 0.0;
  bool degenerate = false;  // rho == 1, field vanishes
};

/// max eps^2 |grad Psi(x) - grad Psi(y)| / (|x-y| log(4 sqrt(d)/|x-y|) |rho-1|_inf)
/// over random pairs with |x-y| < 1. Throws std::invalid_argument for samples < 1000.
LogLipschitzEstimate log_lipschitz_modulus(const FieldSolution& field, const TorusGrid& rho, std::size_t samples,
                                           std::uint64_t seed = 11);

/// CSV with columns i0..i{d-1},value.
void write_grid_csv(std::ostream& out, const TorusGrid& grid);

}  // namespace kwass
