#include "kwass/bounds.hpp"

#include "kwass/errors.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace kwass {

namespace {

void require_nonnegative(double v, const char* what) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be finite and >= 0");
}

// log(improved / dobrushin), written to avoid cancellation for small t.
double log_ratio(double B, double t) {
  return std::log1p(t) + (2.0 / 3.0) * B * t * (3.0 + 3.0 * t + t * t) - (1.0 + 2.0 * B) * t;
}

}  // namespace

double dobrushin_bound(double B, double t, double W10) {
  require_nonnegative(B, "B");
  require_nonnegative(t, "t");
  require_nonnegative(W10, "W10");
  return std::exp((1.0 + 2.0 * B) * t) * W10;
}

double improved_bound(double B, double t, double W10) {
  require_nonnegative(B, "B");
  require_nonnegative(t, "t");
  require_nonnegative(W10, "W10");
  const double cube = t * (3.0 + 3.0 * t + t * t);  // (1+t)^3 - 1
  return (1.0 + t) * std::exp((2.0 / 3.0) * B * cube) * W10;
}

double combined_bound(double B, double t, double W10) {
  return std::min(dobrushin_bound(B, t, W10), improved_bound(B, t, W10));
}

Crossover crossover_time(double B) {
  if (!(B > 0.0) || B > 1.0) throw std::invalid_argument("crossover_time: B must lie in (0, 1]");
  Crossover out;
  constexpr int kScan = 4000;
  const double t_lo = 1e-6, t_hi = 1e3;
  double prev_t = t_lo;
  bool seen_below = log_ratio(B, t_lo) < 0.0;
  for (int k = 1; k <= kScan; ++k) {
    const double t = t_lo * std::pow(t_hi / t_lo, static_cast<double>(k) / kScan);
    const double g = log_ratio(B, t);
    if (seen_below && g > 0.0) {
      double lo = prev_t, hi = t;
      while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        (log_ratio(B, mid) < 0.0 ? lo : hi) = mid;
      }
      out.t = 0.5 * (lo + hi);
      out.found = true;
      return out;
    }
    seen_below = seen_below || g < 0.0;
    prev_t = t;
  }
  return out;
}

double loeper_classical_bound(double W20, double t, double C, double c_d) {
  require_nonnegative(t, "t");
  require_nonnegative(C, "C");
  if (!(c_d > 0.0)) throw std::invalid_argument("loeper_classical_bound: c_d must be > 0");
  if (!(W20 >= 0.0) || W20 >= c_d) throw DomainError("loeper_classical_bound: requires 0 <= W20 < c_d");
  if (W20 == 0.0) return 0.0;
  return c_d * std::exp(std::log(W20 / c_d) * std::exp(-C * t));
}

LoeperImproved loeper_improved_bound(double W20, double eps, double A_int, double A_int_T, double C_d, double c0) {
  require_nonnegative(W20, "W20");
  require_nonnegative(A_int, "A_int");
  require_nonnegative(A_int_T, "A_int_T");
  if (!(eps > 0.0) || eps > 1.0) throw std::invalid_argument("loeper_improved_bound: eps must lie in (0, 1]");
  LoeperImproved out;
  out.theta = W20 * W20 / (eps * eps);
  out.small_data_ok = 0.5 * out.theta <= c0;
  out.horizon_rhs = (C_d / eps) * A_int_T + std::sqrt(std::abs(std::log(eps / std::numbers::e)));
  if (W20 == 0.0) {
    out.horizon_lhs = std::numeric_limits<double>::infinity();
    out.horizon_ok = true;
    return out;
  }
  out.X = out.theta * std::abs(std::log(0.5 * out.theta));
  if (!(out.X < 1.0)) throw DomainError("loeper_improved_bound: X >= 1, initial distance too large");
  const double root_log = std::sqrt(std::abs(std::log(out.X)));
  out.horizon_lhs = root_log;
  out.horizon_ok = root_log >= out.horizon_rhs;
  const double a = root_log - (C_d / eps) * A_int;
  out.value = std::sqrt(2.0 * std::exp(-a * a));
  return out;
}

RValue R_of_t(double Q0, double eps, double A_int, double C_d) {
  if (!(Q0 > 0.0 && Q0 < 1.0)) throw DomainError("R_of_t: Q0 must lie in (0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("R_of_t: eps must be > 0");
  require_nonnegative(A_int, "A_int");
  RValue out;
  if (A_int == 0.0) {
    out.value = out.sup = Q0;
  } else {
    const double a = std::sqrt(std::abs(std::log(Q0))) - (C_d / eps) * A_int;
    out.value = std::exp(-a * a);
    out.sup = std::exp(-std::pow(std::max(a, 0.0), 2));
  }
  out.window_ok = out.sup <= eps / std::numbers::e;
  return out;
}

double phi_modulus(double s) {
  if (!(s > 0.0)) throw std::invalid_argument("phi_modulus: s must be > 0");
  if (s > 1.0 / std::numbers::e) return s;
  const double l = std::log(s);
  return s * l * l;
}

std::vector<double> cumulative_trapezoid(const std::vector<double>& t, const std::vector<double>& f) {
  if (t.size() != f.size()) throw std::invalid_argument("cumulative_trapezoid: size mismatch");
  std::vector<double> out(t.size(), 0.0);
  for (std::size_t k = 1; k < t.size(); ++k) out[k] = out[k - 1] + 0.5 * (t[k] - t[k - 1]) * (f[k] + f[k - 1]);
  return out;
}

// ---------------------------------------------------------------------------

std::string bound_kind_name(BoundKind kind) {
  switch (kind) {
    case BoundKind::dobrushin: return "dobrushin";
    case BoundKind::improved_free_flow: return "improved_free_flow";
    case BoundKind::combined: return "combined";
    case BoundKind::loeper_classical: return "loeper_classical";
    case BoundKind::loeper_improved: return "loeper_improved";
    case BoundKind::R_of_t: return "R_of_t";
  }
  return "unknown";
}

BoundKind parse_bound_kind(const std::string& name) {
  if (name == "dobrushin") return BoundKind::dobrushin;
  if (name == "improved" || name == "improved_free_flow") return BoundKind::improved_free_flow;
  if (name == "combined") return BoundKind::combined;
  if (name == "loeper-classical" || name == "loeper_classical") return BoundKind::loeper_classical;
  if (name == "loeper-improved" || name == "loeper_improved") return BoundKind::loeper_improved;
  if (name == "R" || name == "R_of_t") return BoundKind::R_of_t;
  throw ConfigError("kind", "unknown bound kind '" + name + "'");
}

BoundCurve evaluate_bound(BoundKind kind, const BoundParams& params, const std::vector<double>& times,
                          const std::vector<double>& A_int) {
  const bool needs_a = kind == BoundKind::loeper_improved || kind == BoundKind::R_of_t;
  if (needs_a && A_int.size() != times.size()) {
    throw std::invalid_argument("evaluate_bound: A integral required on the same time grid");
  }
  BoundCurve curve;
  curve.kind = kind;
  curve.params = params;
  curve.times = times;
  const double A_T = needs_a && !A_int.empty() ? A_int.back() : 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double t = times[k];
    double value = 0.0;
    bool ok = true;
    switch (kind) {
      case BoundKind::dobrushin: value = dobrushin_bound(params.B, t, params.W10); break;
      case BoundKind::improved_free_flow: value = improved_bound(params.B, t, params.W10); break;
      case BoundKind::combined: value = combined_bound(params.B, t, params.W10); break;
      case BoundKind::loeper_classical: value = loeper_classical_bound(params.W20, t, params.C, params.c_d); break;
      case BoundKind::loeper_improved: {
        const LoeperImproved b = loeper_improved_bound(params.W20, params.eps, A_int[k], A_T, params.C_d, params.c0);
        value = b.value;
        ok = b.hypothesis_ok();
        break;
      }
      case BoundKind::R_of_t: {
        const RValue r = R_of_t(params.Q0, params.eps, A_int[k], params.C_d);
        value = r.value;
        ok = r.window_ok;
        break;
      }
    }
    curve.values.push_back(value);
    curve.hypothesis_ok.push_back(ok);
  }
  return curve;
}

StabilityReport verify_bound(const std::vector<double>& times, const std::vector<double>& measured,
                             const BoundCurve& curve, const std::vector<double>& allowance) {
  if (times.size() != measured.size() || allowance.size() != times.size() || curve.times.size() != times.size()) {
    throw std::invalid_argument("verify_bound: series lengths differ");
  }
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (std::abs(times[k] - curve.times[k]) > 1e-12 * std::max(1.0, std::abs(times[k]))) {
      throw std::invalid_argument("verify_bound: time grids differ at index " + std::to_string(k));
    }
  }
  StabilityReport r;
  r.times = times;
  r.measured = measured;
  r.bound = curve;
  r.allowance = allowance;
  r.pass = true;
  for (std::size_t k = 0; k < times.size(); ++k) {
    r.margin.push_back(curve.values[k] - measured[k]);
    if (!(measured[k] <= curve.values[k] * (1.0 + allowance[k]))) r.pass = false;
  }
  return r;
}

// ---------------------------------------------------------------------------

std::vector<QPoint> compute_Q_series(const PairedTrajectory& traj, const WeightFunction& w) {
  std::vector<QPoint> out;
  out.reserve(traj.diagnostics.size());
  for (const auto& d : traj.diagnostics) {
    QPoint p;
    p.t = d.t;
    p.D = d.D;
    p.E = d.E;
    try {
      const ImplicitSolution s = implicit_weight_solve(d.D, d.E, w);
      p.q = s.q;
      p.degenerate = s.degenerate;
      p.residual = s.residual;
      p.defined = true;
    } catch (const DomainError&) {
      p.defined = false;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace kwass
