#include "defrec/deformations.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "defrec/errors.hpp"
#include "defrec/neighbor_index.hpp"
#include "defrec/rng.hpp"

namespace defrec {
namespace {

constexpr int kMaxSampleRetries = 16;

DeformedPair relocate(const PointCloud& cloud, std::vector<std::size_t> region, const Vec3& center,
                      double sigma, Rng& rng) {
  if (region.empty()) throw InvalidArgument("empty deformation region");
  if (sigma < 0.0) throw InvalidArgument("relocate_sigma must be non-negative");
  std::sort(region.begin(), region.end());
  PointMatrix pts = cloud.points();
  for (std::size_t i : region) {
    for (int c = 0; c < 3; ++c) {
      const double noise = sigma > 0.0 ? sigma * standard_normal(rng) : 0.0;
      pts(static_cast<Eigen::Index>(i), c) = center[c] + noise;
    }
  }
  return DeformedPair{PointCloud(std::move(pts)), cloud, std::move(region), center};
}

Vec3 random_unit_vector(Rng& rng) {
  for (;;) {
    Vec3 v(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

std::vector<std::size_t> bernoulli_select(const std::vector<double>& probs, Rng& rng) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (uniform01(rng) < probs[i]) out.push_back(i);
  }
  return out;
}

}  // namespace

std::string to_string(DeformKind kind) {
  switch (kind) {
    case DeformKind::Voxel: return "voxel";
    case DeformKind::Sphere: return "sphere";
    case DeformKind::FeatureKnn: return "feature";
    case DeformKind::SampleSplit: return "split";
    case DeformKind::SampleGradient: return "gradient";
    case DeformKind::SampleLambertian: return "lambertian";
    case DeformKind::Mixed: return "mixed";
  }
  return "unknown";
}

DeformKind deform_kind_from_string(const std::string& name) {
  static const std::map<std::string, DeformKind> kinds{
      {"voxel", DeformKind::Voxel},           {"sphere", DeformKind::Sphere},
      {"feature", DeformKind::FeatureKnn},    {"split", DeformKind::SampleSplit},
      {"gradient", DeformKind::SampleGradient}, {"lambertian", DeformKind::SampleLambertian},
      {"mixed", DeformKind::Mixed},
  };
  auto it = kinds.find(name);
  if (it == kinds.end()) throw InvalidArgument("unknown deformation kind '" + name + "'");
  return it->second;
}

void DeformSpec::validate() const {
  if (voxel_k < 2) throw InvalidArgument("voxel grid needs k >= 2");
  if (!(radius > 0.0)) throw InvalidArgument("sphere radius must be positive");
  if (feature_layer < 1) throw InvalidArgument("feature layer is 1-based");
  if (feature_k < 1) throw InvalidArgument("feature region size must be at least 1");
  if (!(relocate_sigma >= 0.0)) throw InvalidArgument("relocate_sigma must be non-negative");
  if (!(sample_cap_fraction > 0.0 && sample_cap_fraction <= 1.0))
    throw InvalidArgument("sample_cap_fraction must lie in (0, 1]");
  if (normal_k < 3) throw InvalidArgument("insufficient neighbors for plane fit");
  if (mixed_volume != DeformKind::Voxel && mixed_volume != DeformKind::Sphere)
    throw InvalidArgument("mixed volume variant must be voxel or sphere");
}

DeformedPair deform_voxel(const PointCloud& cloud, int k, double relocate_sigma, std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("voxel grid needs k >= 1");
  const Vec3 lo = cloud.bbox_min();
  const Vec3 extent = cloud.bbox_max() - lo;

  auto cell = [&](double x, int axis) {
    if (!(extent[axis] > 0.0)) return 0;
    const int c = static_cast<int>(std::floor((x - lo[axis]) / extent[axis] * k));
    return std::clamp(c, 0, k - 1);
  };

  std::map<long, std::vector<std::size_t>> voxels;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.point(i);
    const long id = (static_cast<long>(cell(p[0], 0)) * k + cell(p[1], 1)) * k + cell(p[2], 2);
    voxels[id].push_back(i);
  }

  Rng rng = make_rng(seed);
  auto it = voxels.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(uniform_index(rng, voxels.size())));
  const long id = it->first;
  const int cz = static_cast<int>(id % k);
  const int cy = static_cast<int>((id / k) % k);
  const int cx = static_cast<int>(id / (static_cast<long>(k) * k));
  const Vec3 center(lo[0] + (cx + 0.5) * extent[0] / k, lo[1] + (cy + 0.5) * extent[1] / k,
                    lo[2] + (cz + 0.5) * extent[2] / k);
  return relocate(cloud, it->second, center, relocate_sigma, rng);
}

DeformedPair deform_sphere(const PointCloud& cloud, double r, double relocate_sigma, std::uint64_t seed) {
  if (!(r > 0.0)) throw InvalidArgument("sphere radius must be positive");
  Rng rng = make_rng(seed);
  const Vec3 p = cloud.point(uniform_index(rng, cloud.size()));
  const NeighborIndex index(cloud);
  return relocate(cloud, index.radius(p, r), p, relocate_sigma, rng);
}

DeformedPair deform_feature_knn(const PointCloud& cloud, const Eigen::MatrixXd& features, std::size_t k_pts,
                                double relocate_sigma, std::uint64_t seed) {
  if (static_cast<std::size_t>(features.rows()) != cloud.size())
    throw InvalidArgument("feature rows do not match point count");
  if (k_pts < 1 || k_pts >= cloud.size()) throw InvalidArgument("feature region size must satisfy 1 <= k < n");
  Rng rng = make_rng(seed);
  const std::size_t seed_point = uniform_index(rng, cloud.size());
  // The seed point is always in the region, even when duplicates of its
  // feature vector have lower indices.
  std::vector<std::size_t> region{seed_point};
  for (const Neighbor& nb : knn_exhaustive(features, static_cast<Eigen::Index>(seed_point), k_pts)) {
    if (region.size() == k_pts) break;
    if (nb.index != seed_point) region.push_back(nb.index);
  }
  return relocate(cloud, std::move(region), Vec3::Zero(), relocate_sigma, rng);
}

std::vector<double> lambertian_probabilities(const std::vector<Vec3>& normals, const Vec3& view) {
  std::vector<double> probs(normals.size());
  for (std::size_t i = 0; i < normals.size(); ++i) probs[i] = std::max(0.0, normals[i].dot(view));
  return probs;
}

std::vector<double> gradient_probabilities(const PointCloud& cloud, double peak) {
  const Vec3 lo = cloud.bbox_min();
  const Vec3 extent = cloud.bbox_max() - lo;
  int axis = 0;
  extent.maxCoeff(&axis);
  std::vector<double> probs(cloud.size(), 0.0);
  if (!(extent[axis] > 0.0)) {
    std::fill(probs.begin(), probs.end(), peak);
    return probs;
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    probs[i] = peak * (cloud.points()(static_cast<Eigen::Index>(i), axis) - lo[axis]) / extent[axis];
  }
  return probs;
}

std::vector<std::size_t> split_select(const PointCloud& cloud, const Vec3& plane_normal, double plane_offset,
                                      double keep_prob, std::uint64_t seed) {
  const Vec3 c = cloud.centroid();
  std::vector<std::size_t> below;
  std::vector<std::size_t> above;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double s = (cloud.point(i) - c).dot(plane_normal);
    (s < plane_offset ? below : above).push_back(i);
  }
  const bool below_smaller = below.size() <= above.size();
  std::vector<std::size_t> region = below_smaller ? below : above;
  const std::vector<std::size_t>& larger = below_smaller ? above : below;
  Rng rng = make_rng(seed);
  for (std::size_t i : larger) {
    if (uniform01(rng) < keep_prob) region.push_back(i);
  }
  std::sort(region.begin(), region.end());
  return region;
}

std::vector<std::size_t> cap_region(std::vector<std::size_t> region, std::size_t n, double cap_fraction,
                                    std::uint64_t seed) {
  const auto cap = static_cast<std::size_t>(std::ceil(cap_fraction * static_cast<double>(n)));
  if (region.size() > cap) {
    Rng rng = make_rng(seed);
    std::vector<std::size_t> keep = sample_without_replacement(rng, region.size(), cap);
    std::vector<std::size_t> out;
    out.reserve(cap);
    for (std::size_t k : keep) out.push_back(region[k]);
    region = std::move(out);
  }
  std::sort(region.begin(), region.end());
  return region;
}

DeformedPair deform_sample(const PointCloud& cloud, SampleScheme scheme, const SampleOptions& options,
                           std::uint64_t seed) {
  if (!(options.sample_cap_fraction > 0.0 && options.sample_cap_fraction <= 1.0))
    throw InvalidArgument("sample_cap_fraction must lie in (0, 1]");

  std::vector<Vec3> normals;
  if (scheme == SampleScheme::Lambertian) {
    if (options.normals) {
      if (options.normals->size() != cloud.size()) throw InvalidArgument("normal count does not match point count");
      normals = *options.normals;
    } else {
      normals = estimate_normals(cloud, std::min<std::size_t>(static_cast<std::size_t>(options.normal_k), cloud.size()));
    }
  }

  for (int attempt = 0; attempt <= kMaxSampleRetries; ++attempt) {
    Rng rng = make_rng(derive_seed(seed, {static_cast<std::uint64_t>(attempt)}));
    std::vector<std::size_t> region;
    switch (scheme) {
      case SampleScheme::Split: {
        const Vec3 normal = random_unit_vector(rng);
        const Vec3 c = cloud.centroid();
        double lo = 0.0;
        double hi = 0.0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
          const double s = (cloud.point(i) - c).dot(normal);
          lo = std::min(lo, s);
          hi = std::max(hi, s);
        }
        const double offset = (sample_beta(rng, 2.0, 5.0) - 0.5) * (hi - lo);
        const double keep_prob = uniform01(rng);
        region = split_select(cloud, normal, offset, keep_prob, rng());
        break;
      }
      case SampleScheme::Gradient:
        region = bernoulli_select(gradient_probabilities(cloud, uniform01(rng)), rng);
        break;
      case SampleScheme::Lambertian:
        region = bernoulli_select(lambertian_probabilities(normals, random_unit_vector(rng)), rng);
        break;
    }
    region = cap_region(std::move(region), cloud.size(), options.sample_cap_fraction, rng());
    if (!region.empty()) return relocate(cloud, std::move(region), Vec3::Zero(), options.relocate_sigma, rng);
  }
  throw DataError("degenerate sampling");
}

DeformFamily choose_family(std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, {0x66616d696c79ULL}));
  switch (uniform_index(rng, 3)) {
    case 0: return DeformFamily::Volume;
    case 1: return DeformFamily::Feature;
    default: return DeformFamily::Sample;
  }
}

namespace {

SampleScheme scheme_of(DeformKind kind) {
  switch (kind) {
    case DeformKind::SampleSplit: return SampleScheme::Split;
    case DeformKind::SampleGradient: return SampleScheme::Gradient;
    case DeformKind::SampleLambertian: return SampleScheme::Lambertian;
    default: throw InvalidArgument("not a sample-based deformation");
  }
}

DeformKind kind_of(SampleScheme scheme) {
  switch (scheme) {
    case SampleScheme::Split: return DeformKind::SampleSplit;
    case SampleScheme::Gradient: return DeformKind::SampleGradient;
    case SampleScheme::Lambertian: return DeformKind::SampleLambertian;
  }
  return DeformKind::SampleSplit;
}

}  // namespace

DeformedPair deform_family(const PointCloud& cloud, const DeformSpec& spec, DeformFamily family,
                           std::uint64_t seed, const FeatureFn* features) {
  DeformSpec single = spec;
  switch (family) {
    case DeformFamily::Volume: single.kind = spec.mixed_volume; break;
    case DeformFamily::Feature: single.kind = DeformKind::FeatureKnn; break;
    case DeformFamily::Sample: single.kind = kind_of(spec.mixed_sample); break;
  }
  return deform(cloud, single, seed, features);
}

DeformedPair deform_mixed(const PointCloud& cloud, const DeformSpec& spec, std::uint64_t seed,
                          const FeatureFn* features) {
  return deform_family(cloud, spec, choose_family(seed), derive_seed(seed, {1}), features);
}

DeformedPair deform(const PointCloud& cloud, const DeformSpec& spec, std::uint64_t seed, const FeatureFn* features) {
  switch (spec.kind) {
    case DeformKind::Voxel: return deform_voxel(cloud, spec.voxel_k, spec.relocate_sigma, seed);
    case DeformKind::Sphere: return deform_sphere(cloud, spec.radius, spec.relocate_sigma, seed);
    case DeformKind::FeatureKnn: {
      if (features == nullptr || !*features) throw InvalidArgument("feature-based deformation needs an encoder");
      return deform_feature_knn(cloud, (*features)(cloud, spec.feature_layer),
                                static_cast<std::size_t>(spec.feature_k), spec.relocate_sigma, seed);
    }
    case DeformKind::SampleSplit:
    case DeformKind::SampleGradient:
    case DeformKind::SampleLambertian: {
      SampleOptions opts;
      opts.sample_cap_fraction = spec.sample_cap_fraction;
      opts.relocate_sigma = spec.relocate_sigma;
      opts.normal_k = spec.normal_k;
      return deform_sample(cloud, scheme_of(spec.kind), opts, seed);
    }
    case DeformKind::Mixed: return deform_mixed(cloud, spec, seed, features);
  }
  throw InvalidArgument("unknown deformation kind");
}

}  // namespace defrec
