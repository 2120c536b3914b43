#pragma once

#include <cstddef>
#include <vector>

#include "cegc/geometry.hpp"

namespace cegc {

/// Exact k-nearest-neighbour graph without self loops.
struct NeighborGraph {
  std::size_t points = 0;
  std::size_t k = 0;                 // effective neighbour count per point
  std::vector<std::size_t> indices;  // points * k, row-major, nearest first
  std::vector<Vec3> offsets;         // x_i - x_neighbour, same layout
  bool clamped = false;              // requested k exceeded points - 1

  std::size_t neighbor(std::size_t i, std::size_t j) const { return indices[i * k + j]; }
};

/// Brute-force kNN under the Euclidean metric. Ties in distance go to the lower
/// index. Requires at least two points and k >= 1; k is clamped to M - 1.
NeighborGraph knn_graph(const std::vector<Vec3>& points, std::size_t k);
NeighborGraph knn_graph(const PointCloud& cloud, std::size_t k);

/// For each query point, the index of its nearest reference point (lowest
/// index on ties) and the squared distance.
struct NearestResult {
  std::vector<std::size_t> index;
  std::vector<double> squared_distance;
};
NearestResult nearest_neighbors(const std::vector<Vec3>& query, const std::vector<Vec3>& reference);

}  // namespace cegc
