#pragma once

#include <Eigen/Dense>

#include <vector>

namespace kwass {

/// Minimum-cost perfect matching of rows to columns of a square cost matrix,
/// via shortest augmenting paths with dual potentials (Hungarian method).
/// Returns column index per row. Ties are broken toward the smallest column
/// index during each search, so the output depends only on the input.
std::vector<Eigen::Index> solve_assignment(const Eigen::MatrixXd& cost);

struct TransportFlow {
  Eigen::Index i;
  Eigen::Index j;
  double mass;
};

/// Discrete optimal transport between supplies (rows) and demands (columns)
/// of equal total mass, as a min-cost flow on the complete bipartite network
/// solved by successive shortest paths with Dijkstra on reduced costs.
/// Returns the positive flows in row-major order.
std::vector<TransportFlow> solve_transportation(const Eigen::MatrixXd& cost, const Eigen::VectorXd& supply,
                                                const Eigen::VectorXd& demand);

}  // namespace kwass
