#pragma once

#include "kwass/dynamics.hpp"
#include "kwass/implicit_weight.hpp"

#include <string>
#include <vector>

namespace kwass {

// W1 stability for the smooth-kernel Vlasov equation, B = sup |D^2 K|.
double dobrushin_bound(double B, double t, double W10);
double improved_bound(double B, double t, double W10);
/// min(dobrushin, improved).
double combined_bound(double B, double t, double W10);

struct Crossover {
  double t = 0.0;
  bool found = false;
};

/// First t > 0 where the improved bound overtakes the Dobrushin bound, by a
/// geometric scan of [1e-6, 1e3] and bisection to 1e-10. Not found when the
/// improved bound is never below the Dobrushin one.
Crossover crossover_time(double B);

/// c_d exp(log(W20/c_d) e^{-Ct}); DomainError unless 0 <= W20 < c_d.
double loeper_classical_bound(double W20, double t, double C, double c_d);

struct LoeperImproved {
  double value = 0.0;  // W2 bound (square root of the squared bound)
  double theta = 0.0;  // eps^-2 W20^2
  double X = 0.0;      // theta |log(theta/2)|
  bool small_data_ok = false;  // theta/2 <= c0
  bool horizon_ok = false;     // sqrt|log X| >= (C_d/eps) A_int(T) + sqrt|log(eps/e)|
  double horizon_lhs = 0.0;
  double horizon_rhs = 0.0;
  bool hypothesis_ok() const { return small_data_ok && horizon_ok; }
};

/// W2 bound sqrt(2 exp(-(sqrt|log X| - (C_d/eps) A_int)^2)) with its
/// hypothesis flags; A_int_T is the integral over the whole horizon.
/// DomainError when X >= 1.
LoeperImproved loeper_improved_bound(double W20, double eps, double A_int, double A_int_T, double C_d = 1.0,
                                     double c0 = 0.05);

struct RValue {
  double value = 0.0;
  double sup = 0.0;        // sup over [0, t]
  bool window_ok = false;  // sup <= eps/e
};

/// exp(-(sqrt|log Q0| - (C_d/eps) A_int)^2); equals Q0 exactly when A_int = 0.
/// The integrand A is nonnegative, so the sup over [0,t] is attained at t
/// unless the bracket has changed sign. Rejects Q0 outside (0,1).
RValue R_of_t(double Q0, double eps, double A_int, double C_d = 1.0);

/// s log^2 s for s <= 1/e, s above.
double phi_modulus(double s);

/// Cumulative trapezoid integral, starting at 0.
std::vector<double> cumulative_trapezoid(const std::vector<double>& t, const std::vector<double>& f);

// ---------------------------------------------------------------------------

enum class BoundKind { dobrushin, improved_free_flow, combined, loeper_classical, loeper_improved, R_of_t };

std::string bound_kind_name(BoundKind kind);
/// Accepts the names above and the CLI spellings (improved, loeper-classical, loeper-improved, R).
BoundKind parse_bound_kind(const std::string& name);

struct BoundParams {
  double B = 0.0;
  double W10 = 0.0;
  double W20 = 0.0;
  double eps = 1.0;
  double C_d = 1.0;
  double c0 = 0.05;
  double C = 1.0;    // classical Loeper rate
  double c_d = 1.0;  // classical Loeper ceiling
  double Q0 = 0.0;
};

struct BoundCurve {
  BoundKind kind = BoundKind::combined;
  BoundParams params;
  std::vector<double> times;
  std::vector<double> values;
  std::vector<bool> hypothesis_ok;
};

/// Evaluates a bound on a time grid. A_int holds int_0^t A per time and is
/// required for loeper_improved and R_of_t.
BoundCurve evaluate_bound(BoundKind kind, const BoundParams& params, const std::vector<double>& times,
                          const std::vector<double>& A_int = {});

struct StabilityReport {
  std::vector<double> times;
  std::vector<double> measured;
  BoundCurve bound;
  std::vector<double> allowance;  // relative, per time
  std::vector<double> margin;     // bound - measured
  bool pass = false;
};

/// pass iff measured <= bound (1 + allowance) at every time. Throws
/// std::invalid_argument when the time grids differ.
StabilityReport verify_bound(const std::vector<double>& times, const std::vector<double>& measured,
                             const BoundCurve& curve, const std::vector<double>& allowance);

// ---------------------------------------------------------------------------

struct QPoint {
  double t = 0.0;
  double q = 0.0;
  double D = 0.0;
  double E = 0.0;
  bool defined = false;
  bool degenerate = false;
  double residual = 0.0;
};

/// Q(t) solving Q = Phi(Q) D(t) + E(t) at every snapshot of the trajectory.
std::vector<QPoint> compute_Q_series(const PairedTrajectory& traj, const WeightFunction& w);

}  // namespace kwass
