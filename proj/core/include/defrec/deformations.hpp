#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "defrec/pointcloud.hpp"

namespace defrec {

enum class DeformKind {
  Voxel,
  Sphere,
  FeatureKnn,
  SampleSplit,
  SampleGradient,
  SampleLambertian,
  Mixed,
};

enum class DeformFamily { Volume, Feature, Sample };

enum class SampleScheme { Split, Gradient, Lambertian };

std::string to_string(DeformKind kind);
DeformKind deform_kind_from_string(const std::string& name);

/// Region-selection strategy plus the parameters of every variant.
///
/// For `Mixed`, each call picks one family with probability 1/3 and applies
/// that family's variant: `mixed_volume` (Voxel or Sphere), FeatureKnn, or
/// `mixed_sample`.
struct DeformSpec {
  DeformKind kind = DeformKind::Sphere;
  int voxel_k = 3;
  double radius = 0.2;
  int feature_layer = 3;  ///< 1-based encoder layer supplying the features
  int feature_k = 100;    ///< region size for FeatureKnn
  double relocate_sigma = 0.05;
  double sample_cap_fraction = 0.5;
  int normal_k = 10;
  DeformKind mixed_volume = DeformKind::Sphere;
  SampleScheme mixed_sample = SampleScheme::Lambertian;

  /// Throws InvalidArgument when a parameter is out of range.
  void validate() const;
  friend bool operator==(const DeformSpec&, const DeformSpec&) = default;
};

struct DeformedPair {
  PointCloud deformed;
  PointCloud original;
  std::vector<std::size_t> region;  ///< ascending, non-empty
  Vec3 region_center = Vec3::Zero();
};

/// Per-point features (n rows) for a cloud at a 1-based encoder layer.
using FeatureFn = std::function<Eigen::MatrixXd(const PointCloud&, int layer)>;

DeformedPair deform_voxel(const PointCloud& cloud, int k, double relocate_sigma, std::uint64_t seed);

DeformedPair deform_sphere(const PointCloud& cloud, double r, double relocate_sigma, std::uint64_t seed);

/// Region = a random seed point plus its k_pts - 1 nearest neighbors in feature space.
DeformedPair deform_feature_knn(const PointCloud& cloud, const Eigen::MatrixXd& features, std::size_t k_pts,
                                double relocate_sigma, std::uint64_t seed);

struct SampleOptions {
  double sample_cap_fraction = 0.5;
  double relocate_sigma = 0.05;
  int normal_k = 10;
  /// Lambertian only; estimated from the cloud when absent.
  std::optional<std::vector<Vec3>> normals;
};

DeformedPair deform_sample(const PointCloud& cloud, SampleScheme scheme, const SampleOptions& options,
                           std::uint64_t seed);

DeformFamily choose_family(std::uint64_t seed);

/// Apply the variant the spec configures for one family (mixed_volume,
/// FeatureKnn, or mixed_sample).
DeformedPair deform_family(const PointCloud& cloud, const DeformSpec& spec, DeformFamily family,
                           std::uint64_t seed, const FeatureFn* features = nullptr);

/// `features` is required only when the feature family can be chosen.
DeformedPair deform_mixed(const PointCloud& cloud, const DeformSpec& spec, std::uint64_t seed,
                          const FeatureFn* features = nullptr);

/// Dispatch on spec.kind.
DeformedPair deform(const PointCloud& cloud, const DeformSpec& spec, std::uint64_t seed,
                    const FeatureFn* features = nullptr);

// Selection probabilities used by the sample-based schemes; exposed for tests
// and for the synthetic benchmark's occlusion model.

/// max(0, <normal_i, view>) per point.
std::vector<double> lambertian_probabilities(const std::vector<Vec3>& normals, const Vec3& view);

/// Linear ramp along the largest bounding-box axis: 0 at the low end,
/// `peak` at the high end.
std::vector<double> gradient_probabilities(const PointCloud& cloud, double peak);

/// Split-plane selection: every point on the smaller side of the plane, and
/// each point of the larger side independently with probability `keep_prob`.
std::vector<std::size_t> split_select(const PointCloud& cloud, const Vec3& plane_normal, double plane_offset,
                                      double keep_prob, std::uint64_t seed);

/// Cap an index set at ceil(cap_fraction * n) by uniform subsampling; output ascending.
std::vector<std::size_t> cap_region(std::vector<std::size_t> region, std::size_t n, double cap_fraction,
                                    std::uint64_t seed);

}  // namespace defrec
