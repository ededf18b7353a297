#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "defrec/pointcloud.hpp"

namespace defrec {

struct Neighbor {
  std::size_t index = 0;
  double dist2 = 0.0;
};

/// Squared Euclidean distance, evaluated in a fixed order so that every
/// search path in the library agrees bit-for-bit.
inline double squared_distance(const double* a, const double* b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Exact k-d tree over a fixed point set.
///
/// Results are ordered by (squared distance, index), so ties always resolve
/// to the lowest index and results match an exhaustive scan exactly.
/// Immutable after construction; safe to query from several threads.
class NeighborIndex {
 public:
  explicit NeighborIndex(const PointMatrix& points, std::size_t leaf_size = 8);
  explicit NeighborIndex(const PointCloud& cloud, std::size_t leaf_size = 8)
      : NeighborIndex(cloud.points(), leaf_size) {}

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }

  /// min(k, size()) neighbors sorted by (dist2, index).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;
  Neighbor nearest(const Vec3& query) const;
  /// Indices with dist2 <= radius^2, ascending.
  std::vector<std::size_t> radius(const Vec3& query, double radius) const;

 private:
  struct Node {
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::uint8_t axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);

  PointMatrix points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

/// Exhaustive kNN over rows of an arbitrary-dimension matrix, ties to lowest index.
std::vector<Neighbor> knn_exhaustive(const Eigen::MatrixXd& rows, Eigen::Index query_row, std::size_t k);

}  // namespace defrec
