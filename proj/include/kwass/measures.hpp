#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

namespace kwass {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Torus geometry. Positions live on the unit flat torus [0,1)^d.

namespace detail {
template <typename Scalar>
Scalar minimal_image(Scalar c) {
  Scalar r = c - std::floor(c + Scalar(0.5));
  // c + 1/2 may round up to an integer right below the cut.
  if (r < Scalar(-0.5)) r += Scalar(1);
  if (r >= Scalar(0.5)) r -= Scalar(1);
  return r;
}

template <typename Scalar>
Scalar unit_wrap(Scalar c) {
  Scalar r = c - std::floor(c);
  if (r >= Scalar(1)) r = Scalar(0);  // -1e-17 - floor(-1e-17) rounds to 1
  return r;
}
}  // namespace detail

/// Componentwise minimal-image representative of a raw displacement, each
/// component in [-1/2, 1/2).
template <typename Derived>
typename Derived::PlainObject wrap_displacement(const Eigen::MatrixBase<Derived>& raw) {
  return raw.unaryExpr([](typename Derived::Scalar c) { return detail::minimal_image(c); });
}

/// Componentwise reduction of a position into [0, 1).
template <typename Derived>
typename Derived::PlainObject wrap_position(const Eigen::MatrixBase<Derived>& raw) {
  return raw.unaryExpr([](typename Derived::Scalar c) { return detail::unit_wrap(c); });
}

/// Signed displacement x - y of minimal absolute value per coordinate. Its
/// Euclidean norm is the geodesic distance on the torus.
template <typename DerivedA, typename DerivedB>
typename DerivedA::PlainObject torus_displacement(const Eigen::MatrixBase<DerivedA>& x,
                                                  const Eigen::MatrixBase<DerivedB>& y) {
  return wrap_displacement((x - y).eval());
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar torus_distance(const Eigen::MatrixBase<DerivedA>& x,
                                         const Eigen::MatrixBase<DerivedB>& y) {
  return torus_displacement(x, y).norm();
}

// ---------------------------------------------------------------------------

struct PhasePoint {
  Vector x;  // on the torus
  Vector v;
};

/// Weighted particle cloud on T^d x R^d. Positions and velocities are stored
/// column-wise (d x N). Weights are strictly positive and sum to one.
class PhaseEnsemble {
 public:
  PhaseEnsemble() = default;

  /// Wraps positions into [0,1), drops zero-weight particles and normalizes
  /// the remaining weights. Throws std::invalid_argument on negative or
  /// non-finite input, or when no particle carries mass.
  PhaseEnsemble(Matrix positions, Matrix velocities, Vector weights);

  static PhaseEnsemble uniform(Matrix positions, Matrix velocities);
  static PhaseEnsemble single(const PhasePoint& p);

  Index size() const { return weights_.size(); }
  Index dim() const { return positions_.rows(); }
  bool empty() const { return weights_.size() == 0; }

  const Matrix& positions() const { return positions_; }
  const Matrix& velocities() const { return velocities_; }
  const Vector& weights() const { return weights_; }
  bool has_uniform_weights() const { return uniform_; }

  PhasePoint point(Index i) const { return {positions_.col(i), velocities_.col(i)}; }

  /// Same particles and weights, new phase-space state. Positions are wrapped;
  /// weights are carried over untouched.
  PhaseEnsemble with_state(Matrix positions, Matrix velocities) const;

 private:
  Matrix positions_;
  Matrix velocities_;
  Vector weights_;
  bool uniform_ = false;
};

// ---------------------------------------------------------------------------

/// Sparse transport plan between a source ensemble (rows) and a target (columns).
struct Coupling {
  struct Entry {
    Index i;
    Index j;
    double mass;
  };
  std::vector<Entry> entries;
  Index source_size = 0;
  Index target_size = 0;

  double total_mass() const;

  static Coupling diagonal(const PhaseEnsemble& mu);
  static Coupling product(const PhaseEnsemble& mu, const PhaseEnsemble& nu);
  /// Pairs particle i with particle i, carrying the source weight.
  static Coupling index_paired(const PhaseEnsemble& mu, const PhaseEnsemble& nu);
};

struct CouplingCheck {
  bool pass = false;
  double max_marginal_residual = 0.0;
  double mass_defect = 0.0;
};

/// Marginal check with thresholds 1e-10 (marginals) and 1e-12 (total mass).
/// Throws StructuralError for out-of-range indices or non-positive masses.
CouplingCheck validate_coupling(const Coupling& c, const PhaseEnsemble& mu, const PhaseEnsemble& nu);

// ---------------------------------------------------------------------------
// Phase-space costs.

struct PlainCost {};
struct AnisotropicCost {
  double lambda;
};
struct QuadraticCost {
  double a, b, c;
};
struct ShiftedCost {
  double t;
};

class CostSpec {
 public:
  using Variant = std::variant<PlainCost, AnisotropicCost, QuadraticCost, ShiftedCost>;

  static CostSpec plain(double p);
  static CostSpec anisotropic(double p, double lambda);
  /// (a|dx|^2 + 2b dx.dv + c|dv|^2)^{p/2}; requires a,b,c > 0 and sqrt(ac) > b.
  static CostSpec quadratic(double p, double a, double b, double c);
  /// |(dx - t dv)|^p + |dv|^p with the shifted displacement taken modulo 1.
  static CostSpec shifted(double p, double t);

  double p() const { return p_; }
  const Variant& variant() const { return variant_; }

  /// "plain", "aniso", "quad" or "shifted".
  std::string name() const;
  /// Parameter summary, e.g. "lambda=10".
  std::string params() const;

 private:
  CostSpec(double p, Variant v) : p_(p), variant_(v) {}
  double p_ = 1.0;
  Variant variant_;
};

/// Cost from a raw position difference (x1 - x2, not yet wrapped) and a
/// velocity difference (v1 - v2).
double displacement_cost(const Eigen::Ref<const Vector>& raw_dx, const Eigen::Ref<const Vector>& dv,
                         const CostSpec& spec);

double phase_cost(const PhasePoint& a, const PhasePoint& b, const CostSpec& spec);

/// Cost between particle i of mu and particle j of nu.
double phase_cost(const PhaseEnsemble& mu, Index i, const PhaseEnsemble& nu, Index j, const CostSpec& spec);

/// Dense |mu| x |nu| matrix of pairwise costs.
Matrix cost_matrix(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec);

}  // namespace kwass
