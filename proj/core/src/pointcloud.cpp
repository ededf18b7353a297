#include "defrec/pointcloud.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "defrec/errors.hpp"
#include "defrec/neighbor_index.hpp"
#include "defrec/rng.hpp"

namespace defrec {

PointCloud::PointCloud(PointMatrix points) : points_(std::move(points)) {
  if (points_.rows() == 0) throw DataError("empty cloud");
  if (!points_.allFinite()) throw DataError("non-finite coordinate in point cloud");
}

PointCloud PointCloud::from_points(const std::vector<Vec3>& points) {
  PointMatrix m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  return PointCloud(std::move(m));
}

Vec3 PointCloud::centroid() const { return points_.colwise().mean().transpose(); }
Vec3 PointCloud::bbox_min() const { return points_.colwise().minCoeff().transpose(); }
Vec3 PointCloud::bbox_max() const { return points_.colwise().maxCoeff().transpose(); }

PointCloud PointCloud::select(const std::vector<std::size_t>& indices) const {
  PointMatrix out(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw InvalidArgument("point index out of range");
    out.row(static_cast<Eigen::Index>(i)) = points_.row(static_cast<Eigen::Index>(indices[i]));
  }
  return PointCloud(std::move(out));
}

void validate_label(const LabeledCloud& sample, int num_classes) {
  if (sample.label < 0 || sample.label >= num_classes)
    throw DataError("label " + std::to_string(sample.label) + " outside [0, " + std::to_string(num_classes) + ")");
}

void validate_labels(const SegLabeledCloud& sample, int num_classes) {
  if (sample.labels.size() != sample.cloud.size()) throw DataError("per-point label count does not match point count");
  for (int l : sample.labels) {
    if (l < 0 || l >= num_classes)
      throw DataError("point label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
  }
}

PointCloud normalize_unit_cube(const PointCloud& cloud) {
  const Vec3 lo = cloud.bbox_min();
  const Vec3 hi = cloud.bbox_max();
  const Vec3 center = 0.5 * (lo + hi);
  const double extent = (hi - lo).maxCoeff();
  const double scale = extent > 0.0 ? 1.0 / extent : 1.0;
  PointMatrix out = (cloud.points().rowwise() - center.transpose()) * scale;
  return PointCloud(std::move(out));
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
  const std::size_t n = cloud.size();
  if (m > n) throw InvalidArgument("sample size exceeds cloud size");
  if (m == 0) throw InvalidArgument("sample size must be at least 1");

  Rng rng = make_rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(m);
  picked.push_back(uniform_index(rng, n));

  const double* base = cloud.points().data();
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  while (picked.size() < m) {
    const double* last = base + 3 * picked.back();
    std::size_t best = 0;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], squared_distance(base + 3 * i, last));
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

std::vector<Vec3> estimate_normals(const PointCloud& cloud, std::size_t k) {
  if (k < 3) throw InvalidArgument("insufficient neighbors for plane fit");
  if (k > cloud.size()) throw InvalidArgument("neighbor count exceeds cloud size");

  const NeighborIndex index(cloud);
  const Vec3 center = cloud.centroid();
  std::vector<Vec3> normals(cloud.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.point(i);
    const auto nbrs = index.knn(p, k);
    Vec3 mean = Vec3::Zero();
    for (const auto& nb : nbrs) mean += cloud.point(nb.index);
    mean /= static_cast<double>(nbrs.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& nb : nbrs) {
      const Vec3 d = cloud.point(nb.index) - mean;
      cov.noalias() += d * d.transpose();
    }
    solver.compute(cov);
    Vec3 normal = solver.eigenvectors().col(0).normalized();
    if (normal.dot(p - center) < 0.0) normal = -normal;
    normals[i] = normal;
  }
  return normals;
}

PointCloud jitter(const PointCloud& cloud, double sigma, double clip, std::uint64_t seed) {
  if (sigma < 0.0 || clip < 0.0) throw InvalidArgument("jitter sigma and clip must be non-negative");
  if (sigma == 0.0) return cloud;
  Rng rng = make_rng(seed);
  PointMatrix out = cloud.points();
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double noise = std::clamp(sigma * standard_normal(rng), -clip, clip);
    out.data()[i] += noise;
  }
  return PointCloud(std::move(out));
}

PointCloud rotate_z(const PointCloud& cloud, double angle) {
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  rot(0, 0) = c;
  rot(0, 1) = -s;
  rot(1, 0) = s;
  rot(1, 1) = c;
  PointMatrix out = cloud.points() * rot.transpose();
  return PointCloud(std::move(out));
}

}  // namespace defrec
