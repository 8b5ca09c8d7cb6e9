#pragma once

namespace kwass {

/// Decreasing weight Phi used to make the position penalty depend on the
/// distance itself.
///
///  - log_eps(eps):    Phi(s) = eps^-2 |log s| on (0, 1)
///  - capped_phi(eps): Phi(s) = eps^-2 |log s| for s <= 1/e and
///                     eps^-2 / (e s) for s > 1/e, C^1 and decreasing on (0, inf)
class WeightFunction {
 public:
  enum class Kind { log_eps, capped_phi };

  static WeightFunction log_eps(double eps);
  static WeightFunction capped_phi(double eps);

  Kind kind() const { return kind_; }
  double eps() const { return eps_; }

  /// Throws DomainError outside the domain ((0,1) or (0,inf)).
  double operator()(double s) const;
  double derivative(double s) const;
  /// Upper end of the domain: 1 for log_eps, +inf for capped_phi.
  double domain_end() const;

 private:
  WeightFunction(Kind k, double eps) : kind_(k), eps_(eps) {}
  Kind kind_;
  double eps_;
};

struct ImplicitSolution {
  double q = 0.0;
  bool degenerate = false;  // r == s == 0
  double residual = 0.0;    // |q - Phi(q) r - s|
  int iterations = 0;
};

/// Unique q with q - Phi(q) r = s for moments r, s >= 0.
///
/// For log_eps the root lies in (0,1) and exists iff s < 1; otherwise a
/// NoRootError is raised. For capped_phi the root always exists. r == 0
/// returns s exactly; r == s == 0 returns 0 flagged degenerate.
ImplicitSolution implicit_weight_solve(double r, double s, const WeightFunction& w);

}  // namespace kwass
