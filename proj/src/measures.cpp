#include "kwass/measures.hpp"

#include "kwass/errors.hpp"
#include "kwass/parallel.hpp"

#include <cstdio>
#include <stdexcept>

namespace kwass {

PhaseEnsemble::PhaseEnsemble(Matrix positions, Matrix velocities, Vector weights) {
  if (positions.rows() != velocities.rows() || positions.cols() != velocities.cols() ||
      positions.cols() != weights.size()) {
    throw std::invalid_argument("PhaseEnsemble: positions, velocities and weights disagree in shape");
  }
  if (positions.rows() < 1) throw std::invalid_argument("PhaseEnsemble: dimension must be >= 1");
  if (!positions.allFinite() || !velocities.allFinite()) {
    throw std::invalid_argument("PhaseEnsemble: non-finite position or velocity");
  }
  Index kept = 0;
  for (Index i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
      throw std::invalid_argument("PhaseEnsemble: weights must be finite and nonnegative");
    }
    if (weights[i] > 0.0) ++kept;
  }
  if (kept == 0) throw std::invalid_argument("PhaseEnsemble: no particle with positive weight");

  positions_.resize(positions.rows(), kept);
  velocities_.resize(velocities.rows(), kept);
  weights_.resize(kept);
  Index k = 0;
  for (Index i = 0; i < weights.size(); ++i) {
    if (weights[i] == 0.0) continue;
    positions_.col(k) = wrap_position(positions.col(i));
    velocities_.col(k) = velocities.col(i);
    weights_[k] = weights[i];
    ++k;
  }
  weights_ /= weights_.sum();
  uniform_ = (weights_.array() == weights_[0]).all();
}

PhaseEnsemble PhaseEnsemble::uniform(Matrix positions, Matrix velocities) {
  const Index n = positions.cols();
  return PhaseEnsemble(std::move(positions), std::move(velocities), Vector::Ones(n));
}

PhaseEnsemble PhaseEnsemble::single(const PhasePoint& p) {
  return PhaseEnsemble(Matrix(p.x), Matrix(p.v), Vector::Ones(1));
}

PhaseEnsemble PhaseEnsemble::with_state(Matrix positions, Matrix velocities) const {
  if (positions.rows() != dim() || positions.cols() != size() || velocities.rows() != dim() ||
      velocities.cols() != size()) {
    throw std::invalid_argument("PhaseEnsemble::with_state: shape mismatch");
  }
  PhaseEnsemble out;
  out.positions_ = wrap_position(positions);
  out.velocities_ = std::move(velocities);
  out.weights_ = weights_;
  out.uniform_ = uniform_;
  return out;
}

// ---------------------------------------------------------------------------

double Coupling::total_mass() const {
  double total = 0.0;
  for (const auto& e : entries) total += e.mass;
  return total;
}

Coupling Coupling::diagonal(const PhaseEnsemble& mu) {
  Coupling c;
  c.source_size = c.target_size = mu.size();
  c.entries.reserve(static_cast<std::size_t>(mu.size()));
  for (Index i = 0; i < mu.size(); ++i) c.entries.push_back({i, i, mu.weights()[i]});
  return c;
}

Coupling Coupling::product(const PhaseEnsemble& mu, const PhaseEnsemble& nu) {
  Coupling c;
  c.source_size = mu.size();
  c.target_size = nu.size();
  c.entries.reserve(static_cast<std::size_t>(mu.size() * nu.size()));
  for (Index i = 0; i < mu.size(); ++i) {
    for (Index j = 0; j < nu.size(); ++j) c.entries.push_back({i, j, mu.weights()[i] * nu.weights()[j]});
  }
  return c;
}

Coupling Coupling::index_paired(const PhaseEnsemble& mu, const PhaseEnsemble& nu) {
  if (mu.size() != nu.size()) throw std::invalid_argument("index_paired: ensembles differ in size");
  Coupling c = diagonal(mu);
  c.target_size = nu.size();
  return c;
}

CouplingCheck validate_coupling(const Coupling& c, const PhaseEnsemble& mu, const PhaseEnsemble& nu) {
  if (c.source_size != mu.size() || c.target_size != nu.size()) {
    throw StructuralError("coupling sizes do not match the ensembles");
  }
  Vector rows = Vector::Zero(mu.size());
  Vector cols = Vector::Zero(nu.size());
  double total = 0.0;
  for (const auto& e : c.entries) {
    if (e.i < 0 || e.i >= mu.size() || e.j < 0 || e.j >= nu.size()) {
      throw StructuralError("coupling entry index out of range");
    }
    if (!(e.mass > 0.0) || !std::isfinite(e.mass)) throw StructuralError("coupling entry with non-positive mass");
    rows[e.i] += e.mass;
    cols[e.j] += e.mass;
    total += e.mass;
  }
  CouplingCheck out;
  out.max_marginal_residual = std::max((rows - mu.weights()).cwiseAbs().maxCoeff(),
                                       (cols - nu.weights()).cwiseAbs().maxCoeff());
  out.mass_defect = std::abs(total - 1.0);
  out.pass = out.max_marginal_residual < 1e-10 && out.mass_defect < 1e-12;
  return out;
}

// ---------------------------------------------------------------------------

namespace {
void require_p(double p) {
  if (!(p >= 1.0) || !std::isfinite(p)) throw std::invalid_argument("CostSpec: exponent p must be >= 1");
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double power(double base, double p) { return p == 1.0 ? base : (p == 2.0 ? base * base : std::pow(base, p)); }
}  // namespace

CostSpec CostSpec::plain(double p) {
  require_p(p);
  return {p, PlainCost{}};
}

CostSpec CostSpec::anisotropic(double p, double lambda) {
  require_p(p);
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("CostSpec: lambda must be > 0");
  return {p, AnisotropicCost{lambda}};
}

CostSpec CostSpec::quadratic(double p, double a, double b, double c) {
  require_p(p);
  if (!(a > 0.0 && b > 0.0 && c > 0.0)) throw std::invalid_argument("CostSpec: a, b, c must be > 0");
  if (!(std::sqrt(a * c) > b)) throw std::invalid_argument("CostSpec: requires sqrt(ac) > b");
  return {p, QuadraticCost{a, b, c}};
}

CostSpec CostSpec::shifted(double p, double t) {
  require_p(p);
  if (!(t >= 0.0) || !std::isfinite(t)) throw std::invalid_argument("CostSpec: shift t must be >= 0");
  return {p, ShiftedCost{t}};
}

std::string CostSpec::name() const {
  struct Visitor {
    std::string operator()(const PlainCost&) const { return "plain"; }
    std::string operator()(const AnisotropicCost&) const { return "aniso"; }
    std::string operator()(const QuadraticCost&) const { return "quad"; }
    std::string operator()(const ShiftedCost&) const { return "shifted"; }
  };
  return std::visit(Visitor{}, variant_);
}

std::string CostSpec::params() const {
  struct Visitor {
    std::string operator()(const PlainCost&) const { return ""; }
    std::string operator()(const AnisotropicCost& c) const { return "lambda=" + format_double(c.lambda); }
    std::string operator()(const QuadraticCost& c) const {
      return "a=" + format_double(c.a) + ";b=" + format_double(c.b) + ";c=" + format_double(c.c);
    }
    std::string operator()(const ShiftedCost& c) const { return "t=" + format_double(c.t); }
  };
  return std::visit(Visitor{}, variant_);
}

namespace {

constexpr int kMaxStackDim = 8;

// Allocation-free cost kernel shared by every entry point so that all of them
// agree to the last bit.
double cost_kernel(const double* x1, const double* x2, const double* v1, const double* v2, Index d,
                   const CostSpec& spec) {
  double raw[kMaxStackDim];
  double dxv[kMaxStackDim];
  double dvv[kMaxStackDim];
  double dx2 = 0.0, dv2 = 0.0, dxdv = 0.0;
  for (Index k = 0; k < d; ++k) {
    raw[k] = x1[k] - x2[k];
    dxv[k] = detail::minimal_image(raw[k]);
    dvv[k] = v1[k] - v2[k];
    dx2 += dxv[k] * dxv[k];
    dv2 += dvv[k] * dvv[k];
    dxdv += dxv[k] * dvv[k];
  }
  const double p = spec.p();
  struct Visitor {
    const double* raw;
    const double* dv;
    Index d;
    double dx2, dv2, dxdv, p;
    double operator()(const PlainCost&) const { return power(std::sqrt(dx2), p) + power(std::sqrt(dv2), p); }
    double operator()(const AnisotropicCost& c) const {
      return c.lambda * power(std::sqrt(dx2), p) + power(std::sqrt(dv2), p);
    }
    double operator()(const QuadraticCost& c) const {
      const double form = c.a * dx2 + 2.0 * c.b * dxdv + c.c * dv2;
      return std::pow(std::max(form, 0.0), 0.5 * p);
    }
    double operator()(const ShiftedCost& c) const {
      double s2 = 0.0;
      for (Index k = 0; k < d; ++k) {
        const double s = detail::minimal_image(raw[k] - c.t * dv[k]);
        s2 += s * s;
      }
      return power(std::sqrt(s2), p) + power(std::sqrt(dv2), p);
    }
  };
  return std::visit(Visitor{raw, dvv, d, dx2, dv2, dxdv, p}, spec.variant());
}

void require_stack_dim(Index d) {
  if (d < 1 || d > kMaxStackDim) throw std::invalid_argument("phase-space dimension must be in [1, 8]");
}

}  // namespace

double displacement_cost(const Eigen::Ref<const Vector>& raw_dx, const Eigen::Ref<const Vector>& dv,
                         const CostSpec& spec) {
  if (raw_dx.size() != dv.size()) throw std::invalid_argument("displacement_cost: dimension mismatch");
  require_stack_dim(raw_dx.size());
  const Vector zero = Vector::Zero(raw_dx.size());
  const Vector rx = raw_dx, rv = dv;
  return cost_kernel(rx.data(), zero.data(), rv.data(), zero.data(), raw_dx.size(), spec);
}

double phase_cost(const PhasePoint& a, const PhasePoint& b, const CostSpec& spec) {
  if (a.x.size() != b.x.size() || a.v.size() != b.v.size() || a.x.size() != a.v.size()) {
    throw std::invalid_argument("phase_cost: dimension mismatch");
  }
  require_stack_dim(a.x.size());
  return cost_kernel(a.x.data(), b.x.data(), a.v.data(), b.v.data(), a.x.size(), spec);
}

double phase_cost(const PhaseEnsemble& mu, Index i, const PhaseEnsemble& nu, Index j, const CostSpec& spec) {
  require_stack_dim(mu.dim());
  return cost_kernel(mu.positions().col(i).data(), nu.positions().col(j).data(), mu.velocities().col(i).data(),
                     nu.velocities().col(j).data(), mu.dim(), spec);
}

Matrix cost_matrix(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const CostSpec& spec) {
  if (mu.dim() != nu.dim()) throw std::invalid_argument("cost_matrix: dimension mismatch");
  require_stack_dim(mu.dim());
  Matrix c(mu.size(), nu.size());
  parallel::parallel_for(static_cast<std::size_t>(mu.size()), [&](std::size_t begin, std::size_t end) {
    for (auto i = static_cast<Index>(begin); i < static_cast<Index>(end); ++i) {
      const double* xi = mu.positions().col(i).data();
      const double* vi = mu.velocities().col(i).data();
      for (Index j = 0; j < nu.size(); ++j) {
        c(i, j) = cost_kernel(xi, nu.positions().col(j).data(), vi, nu.velocities().col(j).data(), mu.dim(), spec);
      }
    }
  });
  return c;
}

}  // namespace kwass
