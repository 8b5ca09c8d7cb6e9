#pragma once

// Reference implementations used only by the tests. They share no code with
// the library beyond the PhaseEnsemble container.

#include "kwass/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

inline double wrap(double c) {
  double r = std::fmod(c, 1.0);
  if (r < -0.5) r += 1.0;
  if (r >= 0.5) r -= 1.0;
  return r;
}

struct Cost {
  enum Kind { plain, aniso, quad, shifted } kind = plain;
  double p = 1.0;
  double lambda = 1.0;
  double a = 1.0, b = 0.0, c = 1.0;
  double t = 0.0;
};

inline double cost(const kwass::PhaseEnsemble& mu, Eigen::Index i, const kwass::PhaseEnsemble& nu, Eigen::Index j,
                   const Cost& k) {
  const int d = static_cast<int>(mu.dim());
  double xx = 0, vv = 0, xv = 0, sh = 0;
  for (int r = 0; r < d; ++r) {
    const double raw = mu.positions()(r, i) - nu.positions()(r, j);
    const double dx = wrap(raw);
    const double dv = mu.velocities()(r, i) - nu.velocities()(r, j);
    xx += dx * dx;
    vv += dv * dv;
    xv += dx * dv;
    const double s = wrap(raw - k.t * dv);
    sh += s * s;
  }
  switch (k.kind) {
    case Cost::plain: return std::pow(std::sqrt(xx), k.p) + std::pow(std::sqrt(vv), k.p);
    case Cost::aniso: return k.lambda * std::pow(std::sqrt(xx), k.p) + std::pow(std::sqrt(vv), k.p);
    case Cost::quad: return std::pow(k.a * xx + 2 * k.b * xv + k.c * vv, k.p / 2);
    case Cost::shifted: return std::pow(std::sqrt(sh), k.p) + std::pow(std::sqrt(vv), k.p);
  }
  return 0;
}

/// min over permutations of (1/N) sum_i c(i, sigma(i)), uniform weights.
inline double brute_force_ot(const kwass::PhaseEnsemble& mu, const kwass::PhaseEnsemble& nu, const Cost& k) {
  const Eigen::Index n = mu.size();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (Eigen::Index i = 0; i < n; ++i) s += cost(mu, i, nu, perm[static_cast<std::size_t>(i)], k);
    best = std::min(best, s / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline kwass::PhaseEnsemble random_uniform(int n, int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(d, n), v(d, n);
  for (int j = 0; j < n; ++j) {
    for (int r = 0; r < d; ++r) {
      x(r, j) = u(rng);
      v(r, j) = g(rng);
    }
  }
  return kwass::PhaseEnsemble::uniform(x, v);
}

// Weight functions written out from their definitions.
inline double phi_log(double s, double eps) { return std::abs(std::log(s)) / (eps * eps); }
inline double phi_capped(double s, double eps) {
  return s <= std::exp(-1.0) ? std::abs(std::log(s)) / (eps * eps) : 1.0 / (std::exp(1.0) * s * eps * eps);
}

/// Root of q - phi(q) r - s by plain bisection on [lo, hi].
template <typename Phi>
double bisect_implicit(double r, double s, Phi phi, double lo, double hi) {
  for (int k = 0; k < 2000 && hi - lo > 0; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (mid - phi(mid) * r - s < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// First sign change of f from negative to positive on a fine uniform grid,
/// refined by bisection.
template <typename F>
double first_upcrossing(F f, double t_max, int points) {
  double prev = 0;
  bool below = false;
  for (int k = 1; k <= points; ++k) {
    const double t = t_max * k / points;
    const double g = f(t);
    if (below && g > 0) {
      double lo = prev, hi = t;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    below = below || g < 0;
    prev = t;
  }
  return -1;
}

/// Exact W2^2 between two 1-D densities on the circle given as histograms on
/// the same cell-centred grid, by the quantile formula minimized over the
/// circular shift of the cumulative distribution (Delon-Salomon-Sobolevski).
/// The shift is scanned on a fine grid and refined by golden-section search.
inline double circle_w2_squared(const std::vector<double>& p, const std::vector<double>& q) {
  const int n = static_cast<int>(p.size());
  // Cell masses, normalized.
  std::vector<double> a(p), b(q);
  const double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
  for (auto& x : a) x /= sa;
  for (auto& x : b) x /= sb;
  // Atoms at cell centres; W2 on the circle between discrete measures for a
  // given shift theta is int_0^1 |F^-1(u) - G^-1(u - theta)|^2 du with the
  // inverse CDFs extended periodically.
  auto atoms = [&](const std::vector<double>& m) {
    std::vector<std::pair<double, double>> out;  // (cumulative upper, position)
    double c = 0;
    for (int k = 0; k < n; ++k) {
      if (m[k] <= 0) continue;
      c += m[k];
      out.emplace_back(c, (k + 0.5) / n);
    }
    out.back().first = 1.0;
    return out;
  };
  const auto A = atoms(a), B = atoms(b);
  auto cost_for = [&](double theta) {
    // Merge breakpoints of u in [0,1) for F^-1(u) and G^-1(u - theta).
    std::vector<double> cuts{0.0, 1.0};
    for (const auto& e : A) cuts.push_back(e.first);
    for (const auto& e : B) {
      double u = e.first + theta;
      u -= std::floor(u);
      cuts.push_back(u);
    }
    std::sort(cuts.begin(), cuts.end());
    auto inv = [](const std::vector<std::pair<double, double>>& m, double u, double& shift) {
      // u may lie outside [0,1); periodic extension adds integer shifts.
      const double fl = std::floor(u);
      shift = fl;
      const double w = u - fl;
      auto it = std::upper_bound(m.begin(), m.end(), w,
                                 [](double val, const std::pair<double, double>& e) { return val < e.first; });
      if (it == m.end()) --it;
      return it->second;
    };
    double total = 0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      const double lo = cuts[k], hi = cuts[k + 1];
      if (hi - lo <= 0) continue;
      const double mid = 0.5 * (lo + hi);
      double s1, s2;
      const double x = inv(A, mid, s1) + s1;
      const double y = inv(B, mid - theta, s2) + s2;
      const double dx = x - y;
      total += (hi - lo) * dx * dx;
    }
    return total;
  };
  // The optimal coupling is monotone for some shift and the objective in
  // theta is convex up to the integer lift; scan and refine.
  double best = std::numeric_limits<double>::infinity(), best_theta = 0;
  const int scan = 4 * n;
  for (int k = 0; k <= scan; ++k) {
    const double th = -1.0 + 2.0 * k / scan;
    const double c = cost_for(th);
    if (c < best) {
      best = c;
      best_theta = th;
    }
  }
  double lo = best_theta - 2.0 / scan, hi = best_theta + 2.0 / scan;
  const double gr = (std::sqrt(5.0) - 1) / 2;
  for (int it = 0; it < 100; ++it) {
    const double m1 = hi - gr * (hi - lo), m2 = lo + gr * (hi - lo);
    (cost_for(m1) < cost_for(m2) ? hi : lo) = (cost_for(m1) < cost_for(m2) ? m2 : m1);
  }
  return std::min(best, cost_for(0.5 * (lo + hi)));
}

}  // namespace oracle
