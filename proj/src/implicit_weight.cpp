#include "kwass/implicit_weight.hpp"

#include "kwass/errors.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace kwass {

namespace {
constexpr double kInvE = 1.0 / std::numbers::e;

void require_eps(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw std::invalid_argument("WeightFunction: eps must be > 0");
}
}  // namespace

WeightFunction WeightFunction::log_eps(double eps) {
  require_eps(eps);
  return {Kind::log_eps, eps};
}

WeightFunction WeightFunction::capped_phi(double eps) {
  require_eps(eps);
  return {Kind::capped_phi, eps};
}

double WeightFunction::domain_end() const {
  return kind_ == Kind::log_eps ? 1.0 : std::numeric_limits<double>::infinity();
}

double WeightFunction::operator()(double s) const {
  const double scale = 1.0 / (eps_ * eps_);
  if (!(s > 0.0)) throw DomainError("weight function evaluated at s <= 0");
  if (kind_ == Kind::log_eps) {
    if (s > 1.0) throw DomainError("logarithmic weight evaluated outside (0, 1]");
    return -scale * std::log(s);
  }
  return s <= kInvE ? -scale * std::log(s) : scale * kInvE / s;
}

double WeightFunction::derivative(double s) const {
  const double scale = 1.0 / (eps_ * eps_);
  if (!(s > 0.0)) throw DomainError("weight function evaluated at s <= 0");
  if (kind_ == Kind::log_eps) {
    if (s > 1.0) throw DomainError("logarithmic weight evaluated outside (0, 1]");
    return -scale / s;
  }
  return s <= kInvE ? -scale / s : -scale * kInvE / (s * s);
}

ImplicitSolution implicit_weight_solve(double r, double s, const WeightFunction& w) {
  if (!(r >= 0.0) || !(s >= 0.0) || !std::isfinite(r) || !std::isfinite(s)) {
    throw std::invalid_argument("implicit_weight_solve: moments must be finite and nonnegative");
  }
  if (w.kind() == WeightFunction::Kind::log_eps && s >= 1.0) {
    throw NoRootError("implicit_weight_solve: no root in (0,1) for velocity moment >= 1");
  }
  ImplicitSolution out;
  if (r == 0.0) {
    out.q = s;
    out.degenerate = s == 0.0;
    return out;
  }

  auto f = [&](double q) { return q - w(q) * r - s; };
  auto df = [&](double q) { return 1.0 - w.derivative(q) * r; };

  // F is strictly increasing; bracket the root with F(lo) <= 0 < F(hi).
  double lo = s > 0.0 ? s : std::numeric_limits<double>::min();
  double hi;
  if (w.kind() == WeightFunction::Kind::log_eps) {
    hi = 1.0;
  } else if (s > 0.0) {
    hi = s + w(s) * r;
  } else {
    hi = 1.0;
    while (f(hi) <= 0.0) hi *= 2.0;
  }
  if (f(lo) > 0.0) {
    // Only possible for s == 0 with r below the smallest normal; q is then ~0.
    out.q = lo;
    out.residual = std::abs(f(lo));
    return out;
  }

  double q = lo > 0.0 && hi / lo > 4.0 ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
  for (int it = 0; it < 400; ++it) {
    out.iterations = it + 1;
    const double fq = f(q);
    if (fq == 0.0) {
      lo = hi = q;
      break;
    }
    (fq < 0.0 ? lo : hi) = q;
    if (std::nextafter(lo, hi) >= hi) break;
    const double newton = q - fq / df(q);
    double next;
    if (newton > lo && newton < hi) {
      next = newton;
    } else {
      next = lo > 0.0 && hi / lo > 4.0 ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    }
    if (next == q) break;
    q = next;
  }

  // Pick the representable point with the smallest residual near the root.
  double best = q;
  double best_res = std::abs(f(q));
  for (double cand : {lo, hi, std::nextafter(q, 0.0), std::nextafter(q, hi + 1.0)}) {
    if (!(cand > 0.0) || cand > w.domain_end()) continue;
    const double res = std::abs(f(cand));
    if (res < best_res) {
      best_res = res;
      best = cand;
    }
  }
  out.q = best;
  out.residual = best_res;
  return out;
}

}  // namespace kwass
