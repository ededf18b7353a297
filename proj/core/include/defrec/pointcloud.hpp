#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace defrec {

using Vec3 = Eigen::Vector3d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// An n x 3 set of finite coordinates, n >= 1.
class PointCloud {
 public:
  PointCloud() = default;
  /// Throws DataError on an empty matrix or a non-finite coordinate.
  explicit PointCloud(PointMatrix points);
  static PointCloud from_points(const std::vector<Vec3>& points);

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
  bool empty() const noexcept { return points_.rows() == 0; }

  Vec3 point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)).transpose(); }
  const PointMatrix& points() const noexcept { return points_; }

  Vec3 centroid() const;
  Vec3 bbox_min() const;
  Vec3 bbox_max() const;

  /// Rows picked by index, in the given order.
  PointCloud select(const std::vector<std::size_t>& indices) const;

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_.rows() == b.points_.rows() && a.points_ == b.points_;
  }

 private:
  PointMatrix points_;
};

struct LabeledCloud {
  PointCloud cloud;
  int label = 0;
};

struct SegLabeledCloud {
  PointCloud cloud;
  std::vector<int> labels;
};

/// Throws DataError unless 0 <= label < num_classes.
void validate_label(const LabeledCloud& sample, int num_classes);
/// Throws DataError unless there is one label per point, each in [0, num_classes).
void validate_labels(const SegLabeledCloud& sample, int num_classes);

/// Center on the bounding-box center and scale so the largest extent is 1.
/// A single-location cloud is only centered.
PointCloud normalize_unit_cube(const PointCloud& cloud);

/// Greedy farthest point sampling. The first index is drawn from `seed`;
/// ties go to the lowest index.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m, std::uint64_t seed);

/// Per-point unit normals from a plane fit to the k nearest neighbors
/// (query point included), oriented away from the cloud centroid.
std::vector<Vec3> estimate_normals(const PointCloud& cloud, std::size_t k = 10);

inline constexpr double kJitterSigma = 0.01;
inline constexpr double kJitterClip = 0.02;

/// Per-coordinate Gaussian noise clamped to [-clip, clip].
PointCloud jitter(const PointCloud& cloud, double sigma, double clip, std::uint64_t seed);

PointCloud rotate_z(const PointCloud& cloud, double angle);

}  // namespace defrec
