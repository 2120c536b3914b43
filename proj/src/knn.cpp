#include "cegc/knn.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <utility>

namespace cegc {

NeighborGraph knn_graph(const std::vector<Vec3>& points, std::size_t k) {
  if (k < 1) throw std::invalid_argument("knn_graph: k must be at least 1");
  const std::size_t m = points.size();
  if (m < 2) throw std::invalid_argument("knn_graph: need at least 2 points");
  NeighborGraph g;
  g.points = m;
  g.clamped = k > m - 1;
  g.k = std::min(k, m - 1);
  g.indices.resize(m * g.k);
  g.offsets.resize(m * g.k);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) cand.emplace_back((points[i] - points[j]).squaredNorm(), j);
    }
    // pair ordering breaks distance ties by index
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(g.k), cand.end());
    for (std::size_t j = 0; j < g.k; ++j) {
      const std::size_t n = cand[j].second;
      g.indices[i * g.k + j] = n;
      g.offsets[i * g.k + j] = points[i] - points[n];
    }
  }
  return g;
}

NeighborGraph knn_graph(const PointCloud& cloud, std::size_t k) { return knn_graph(cloud.points, k); }

NearestResult nearest_neighbors(const std::vector<Vec3>& query, const std::vector<Vec3>& reference) {
  if (reference.empty()) throw std::invalid_argument("nearest_neighbors: empty reference set");
  NearestResult r;
  r.index.resize(query.size());
  r.squared_distance.resize(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < reference.size(); ++j) {
      const double d = (query[i] - reference[j]).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    r.index[i] = arg;
    r.squared_distance[i] = best;
  }
  return r;
}

}  // namespace cegc
