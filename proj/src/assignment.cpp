#include "kwass/assignment.hpp"

#include "kwass/errors.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace kwass {

using Eigen::Index;

std::vector<Index> solve_assignment(const Eigen::MatrixXd& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw std::invalid_argument("solve_assignment: cost matrix must be square");
  if (!cost.allFinite()) throw NumericalError("solve_assignment: non-finite cost");
  if (n == 0) return {};

  // Row-major copy so the inner scan over columns is contiguous.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> a = cost;
  constexpr double inf = std::numeric_limits<double>::infinity();

  // 1-based arrays; column 0 is the virtual root of each search tree.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Index> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Index i0 = match[j0];
      const double* row = a.data() + (i0 - 1) * n;
      const double ui0 = u[i0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - ui0 - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<Index> assignment(static_cast<std::size_t>(n));
  for (Index j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(match[j] - 1)] = j - 1;
  return assignment;
}

std::vector<TransportFlow> solve_transportation(const Eigen::MatrixXd& cost, const Eigen::VectorXd& supply,
                                                const Eigen::VectorXd& demand) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  if (supply.size() != n || demand.size() != m) throw std::invalid_argument("solve_transportation: shape mismatch");
  if (n == 0 || m == 0) throw std::invalid_argument("solve_transportation: empty problem");
  if (!cost.allFinite()) throw NumericalError("solve_transportation: non-finite cost");
  if ((supply.array() < 0.0).any() || (demand.array() < 0.0).any()) {
    throw std::invalid_argument("solve_transportation: negative mass");
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  constexpr double tol = 1e-15;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> c = cost;

  // Nodes 0..n-1 are sources, n..n+m-1 sinks. Reduced cost of the forward arc
  // i -> j is c_ij + phi_i - phi_j and stays nonnegative.
  std::vector<double> phi(static_cast<std::size_t>(n + m), 0.0);
  for (Index j = 0; j < m; ++j) phi[n + j] = cost.col(j).minCoeff();

  std::vector<double> supply_left(supply.data(), supply.data() + n);
  std::vector<double> demand_left(demand.data(), demand.data() + m);
  // Positive flows, stored per sink: (source, mass).
  std::vector<std::vector<std::pair<Index, double>>> flows(static_cast<std::size_t>(m));

  std::vector<double> dist(static_cast<std::size_t>(n + m));
  std::vector<Index> pred(static_cast<std::size_t>(n + m));
  std::vector<char> settled(static_cast<std::size_t>(n + m));

  auto flow_ref = [&](Index i, Index j) -> double& {
    for (auto& [src, mass] : flows[j]) {
      if (src == i) return mass;
    }
    flows[j].emplace_back(i, 0.0);
    return flows[j].back().second;
  };

  const Index max_rounds = 20 * (n + m) + 1000;
  for (Index round = 0;; ++round) {
    if (round > max_rounds) throw NumericalError("solve_transportation: augmentation limit exceeded");
    bool any_supply = false;
    for (Index i = 0; i < n; ++i) any_supply |= supply_left[i] > tol;
    if (!any_supply) break;

    std::fill(dist.begin(), dist.end(), inf);
    std::fill(pred.begin(), pred.end(), -1);
    std::fill(settled.begin(), settled.end(), 0);
    for (Index i = 0; i < n; ++i) {
      if (supply_left[i] > tol) dist[i] = 0.0;
    }

    Index target = -1;
    double target_dist = inf;
    for (;;) {
      Index best = -1;
      double best_d = inf;
      for (Index k = 0; k < n + m; ++k) {
        if (!settled[k] && dist[k] < best_d) {
          best_d = dist[k];
          best = k;
        }
      }
      if (best < 0) break;
      settled[best] = 1;
      if (best >= n) {
        const Index j = best - n;
        if (demand_left[j] > tol) {
          target = j;
          target_dist = best_d;
          break;
        }
        for (const auto& [i, mass] : flows[j]) {
          if (settled[i] || mass <= 0.0) continue;
          const double rc = std::max(0.0, -c(i, j) + phi[n + j] - phi[i]);
          if (best_d + rc < dist[i]) {
            dist[i] = best_d + rc;
            pred[i] = best;
          }
        }
      } else {
        const Index i = best;
        const double* row = c.data() + i * m;
        const double phi_i = phi[i];
        for (Index j = 0; j < m; ++j) {
          if (settled[n + j]) continue;
          const double nd = best_d + std::max(0.0, row[j] + phi_i - phi[n + j]);
          if (nd < dist[n + j]) {
            dist[n + j] = nd;
            pred[n + j] = i;
          }
        }
      }
    }
    if (target < 0) break;  // remaining supply is round-off; nothing reachable

    for (Index k = 0; k < n + m; ++k) phi[k] += std::min(dist[k], target_dist);

    // Bottleneck along the path target <- source <- sink <- ... <- origin.
    double push = demand_left[target];
    Index node = n + target;
    while (true) {
      const Index i = pred[node];
      if (pred[i] < 0) {
        push = std::min(push, supply_left[i]);
        break;
      }
      const Index j = pred[i] - n;
      push = std::min(push, flow_ref(i, j));
      node = n + j;
    }

    node = n + target;
    demand_left[target] -= push;
    while (true) {
      const Index j = node - n;
      const Index i = pred[node];
      flow_ref(i, j) += push;
      if (pred[i] < 0) {
        supply_left[i] -= push;
        break;
      }
      const Index jr = pred[i] - n;
      double& back = flow_ref(i, jr);
      back -= push;
      if (back <= tol) {
        auto& list = flows[jr];
        list.erase(std::remove_if(list.begin(), list.end(), [i](const auto& e) { return e.first == i; }), list.end());
      }
      node = n + jr;
    }
  }

  std::vector<TransportFlow> out;
  for (Index j = 0; j < m; ++j) {
    for (const auto& [i, mass] : flows[j]) {
      if (mass > 0.0) out.push_back({i, j, mass});
    }
  }
  std::sort(out.begin(), out.end(), [](const TransportFlow& a, const TransportFlow& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  return out;
}

}  // namespace kwass
