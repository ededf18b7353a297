#include "defrec/benchmark_gen.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "defrec/deformations.hpp"
#include "defrec/errors.hpp"
#include "defrec/rng.hpp"

namespace defrec {

std::string to_string(Primitive p) {
  switch (p) {
    case Primitive::Box: return "box";
    case Primitive::Cylinder: return "cylinder";
    case Primitive::Cone: return "cone";
    case Primitive::Torus: return "torus";
    case Primitive::Ellipsoid: return "ellipsoid";
    case Primitive::Pyramid: return "pyramid";
  }
  return "unknown";
}

void BenchmarkSpec::validate() const {
  if (!segmentation && (num_classes < 2 || num_classes > kPrimitiveCount))
    throw InvalidArgument("benchmark class count must be in [2, " + std::to_string(kPrimitiveCount) + "]");
  if (source_train < 1 || target_train < 1) throw InvalidArgument("benchmark train splits must be non-empty");
  if (source_test < 0 || target_test < 0) throw InvalidArgument("benchmark test sizes must be >= 0");
  if (points < 8) throw InvalidArgument("benchmark clouds need at least 8 points");
  if (oversample < 1) throw InvalidArgument("oversample must be >= 1");
  if (!(view_visibility >= 0.0 && view_visibility <= 1.0)) throw InvalidArgument("view_visibility must be in [0, 1]");
  if (!(missing_fraction >= 0.0 && missing_fraction < 1.0)) throw InvalidArgument("missing_fraction must be in [0, 1)");
  if (!(sparsity > 0.0)) throw InvalidArgument("sparsity must be > 0");
  if (!(target_noise >= 0.0)) throw InvalidArgument("target_noise must be >= 0");
}

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

struct SurfacePoint {
  Vec3 p;
  Vec3 n;
};

struct Patch {
  double area = 0.0;
  int part = 0;
  std::function<SurfacePoint(Rng&)> sample;
};

using Surface = std::vector<Patch>;

void add_rect(Surface& s, const Vec3& origin, const Vec3& u, const Vec3& v, const Vec3& normal, int part) {
  s.push_back({u.cross(v).norm(), part, [=](Rng& rng) {
                 return SurfacePoint{origin + uniform01(rng) * u + uniform01(rng) * v, normal};
               }});
}

void add_triangle(Surface& s, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& outward_from, int part) {
  Vec3 n = (b - a).cross(c - a);
  const double area = 0.5 * n.norm();
  n.normalize();
  if (n.dot((a + b + c) / 3.0 - outward_from) < 0.0) n = -n;
  s.push_back({area, part, [=](Rng& rng) {
                 const double r1 = std::sqrt(uniform01(rng));
                 const double r2 = uniform01(rng);
                 return SurfacePoint{(1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c, n};
               }});
}

void add_box(Surface& s, const Vec3& center, const Vec3& half, int part) {
  for (int axis = 0; axis < 3; ++axis) {
    const int i = (axis + 1) % 3;
    const int j = (axis + 2) % 3;
    for (int sign : {-1, 1}) {
      Vec3 n = Vec3::Zero();
      n[axis] = sign;
      Vec3 u = Vec3::Zero();
      Vec3 v = Vec3::Zero();
      u[i] = 2.0 * half[i];
      v[j] = 2.0 * half[j];
      Vec3 origin = center;
      origin[axis] += sign * half[axis];
      origin[i] -= half[i];
      origin[j] -= half[j];
      add_rect(s, origin, u, v, n, part);
    }
  }
}

void add_disk(Surface& s, const Vec3& center, double r, double normal_z, int part) {
  s.push_back({kPi * r * r, part, [=](Rng& rng) {
                 const double rho = r * std::sqrt(uniform01(rng));
                 const double t = 2.0 * kPi * uniform01(rng);
                 return SurfacePoint{center + Vec3(rho * std::cos(t), rho * std::sin(t), 0.0), Vec3(0, 0, normal_z)};
               }});
}

/// Vertical cylinder from base.z to base.z + h.
void add_cylinder(Surface& s, const Vec3& base, double r, double h, int part, bool caps) {
  s.push_back({2.0 * kPi * r * h, part, [=](Rng& rng) {
                 const double t = 2.0 * kPi * uniform01(rng);
                 const Vec3 n(std::cos(t), std::sin(t), 0.0);
                 return SurfacePoint{base + r * n + Vec3(0, 0, h * uniform01(rng)), n};
               }});
  if (caps) {
    add_disk(s, base, r, -1.0, part);
    add_disk(s, base + Vec3(0, 0, h), r, 1.0, part);
  }
}

void add_cone(Surface& s, const Vec3& base, double r, double h, int part) {
  const double slant = std::hypot(r, h);
  s.push_back({kPi * r * slant, part, [=](Rng& rng) {
                 const double rho = std::sqrt(uniform01(rng));  // distance from apex, as a fraction
                 const double t = 2.0 * kPi * uniform01(rng);
                 const Vec3 n = Vec3(h * std::cos(t), h * std::sin(t), r).normalized();
                 return SurfacePoint{base + Vec3(rho * r * std::cos(t), rho * r * std::sin(t), h * (1.0 - rho)), n};
               }});
  add_disk(s, base, r, -1.0, part);
}

void add_torus(Surface& s, const Vec3& center, double big_r, double small_r, int part) {
  s.push_back({4.0 * kPi * kPi * big_r * small_r, part, [=](Rng& rng) {
                 double phi = 0.0;
                 // Area element is proportional to R + r cos(phi).
                 do {
                   phi = 2.0 * kPi * uniform01(rng);
                 } while (uniform01(rng) * (big_r + small_r) > big_r + small_r * std::cos(phi));
                 const double t = 2.0 * kPi * uniform01(rng);
                 const Vec3 n(std::cos(phi) * std::cos(t), std::cos(phi) * std::sin(t), std::sin(phi));
                 const Vec3 ring(big_r * std::cos(t), big_r * std::sin(t), 0.0);
                 return SurfacePoint{center + ring + small_r * n, n};
               }});
}

void add_ellipsoid(Surface& s, const Vec3& center, const Vec3& axes, int part) {
  // Thomsen's approximation of the surface area.
  constexpr double p = 1.6075;
  const double ab = std::pow(axes.x() * axes.y(), p);
  const double ac = std::pow(axes.x() * axes.z(), p);
  const double bc = std::pow(axes.y() * axes.z(), p);
  const double area = 4.0 * kPi * std::pow((ab + ac + bc) / 3.0, 1.0 / p);
  s.push_back({area, part, [=](Rng& rng) {
                 Vec3 d(standard_normal(rng), standard_normal(rng), standard_normal(rng));
                 d.normalize();
                 const Vec3 q = d.cwiseProduct(axes);
                 const Vec3 n = q.cwiseQuotient(axes.cwiseProduct(axes)).normalized();
                 return SurfacePoint{center + q, n};
               }});
}

void add_pyramid(Surface& s, const Vec3& base, double half, double h, int part) {
  const Vec3 apex = base + Vec3(0, 0, h);
  const Vec3 inside = base + Vec3(0, 0, h / 4.0);
  const Vec3 c[4] = {base + Vec3(-half, -half, 0), base + Vec3(half, -half, 0), base + Vec3(half, half, 0),
                     base + Vec3(-half, half, 0)};
  for (int k = 0; k < 4; ++k) add_triangle(s, c[k], c[(k + 1) % 4], apex, inside, part);
  add_rect(s, c[0], c[1] - c[0], c[3] - c[0], Vec3(0, 0, -1), part);
}

Surface primitive_surface(Primitive prim, Rng& rng) {
  Surface s;
  const Vec3 o = Vec3::Zero();
  switch (prim) {
    case Primitive::Box:
      add_box(s, o, Vec3(uniform(rng, 0.25, 0.5), uniform(rng, 0.25, 0.5), uniform(rng, 0.25, 0.5)), 0);
      break;
    case Primitive::Cylinder:
      add_cylinder(s, o, uniform(rng, 0.25, 0.45), uniform(rng, 0.5, 1.0), 0, true);
      break;
    case Primitive::Cone:
      add_cone(s, o, uniform(rng, 0.3, 0.5), uniform(rng, 0.6, 1.1), 0);
      break;
    case Primitive::Torus:
      add_torus(s, o, uniform(rng, 0.35, 0.5), uniform(rng, 0.1, 0.2), 0);
      break;
    case Primitive::Ellipsoid:
      add_ellipsoid(s, o, Vec3(uniform(rng, 0.3, 0.5), uniform(rng, 0.3, 0.5), uniform(rng, 0.3, 0.5)), 0);
      break;
    case Primitive::Pyramid:
      add_pyramid(s, o, uniform(rng, 0.3, 0.5), uniform(rng, 0.5, 1.0), 0);
      break;
  }
  return s;
}

/// Chair-like assembly: seat 0, back 1, legs 2, arms 3.
Surface chair_surface(Rng& rng) {
  Surface s;
  const double w = uniform(rng, 0.8, 1.2);       // seat width (x)
  const double d = uniform(rng, 0.8, 1.2);       // seat depth (y)
  const double h = uniform(rng, 0.6, 1.0);       // seat height
  const double t = uniform(rng, 0.06, 0.1);      // slab thickness
  const double back_h = uniform(rng, 0.6, 1.0);
  const double leg_r = uniform(rng, 0.035, 0.06);
  const double arm_h = uniform(rng, 0.2, 0.35);

  add_box(s, Vec3(0, 0, h), Vec3(w / 2, d / 2, t / 2), 0);
  add_box(s, Vec3(0, d / 2 - t / 2, h + t / 2 + back_h / 2), Vec3(w / 2, t / 2, back_h / 2), 1);
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      add_cylinder(s, Vec3(sx * (w / 2 - 2 * leg_r), sy * (d / 2 - 2 * leg_r), 0), leg_r, h - t / 2, 2, false);
  for (int sx : {-1, 1}) {
    add_box(s, Vec3(sx * (w / 2 - t / 2), 0, h + t / 2 + arm_h), Vec3(t / 2, d / 2, t / 2), 3);
    add_box(s, Vec3(sx * (w / 2 - t / 2), -d / 2 + t, h + t / 2 + arm_h / 2), Vec3(t / 2, t / 2, arm_h / 2), 3);
  }
  return s;
}

struct DenseSample {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<int> parts;
};

DenseSample sample_surface(const Surface& s, std::size_t m, double yaw, Rng& rng) {
  std::vector<double> cumulative;
  double total = 0.0;
  for (const Patch& p : s) cumulative.push_back(total += p.area);
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  DenseSample out;
  for (std::size_t k = 0; k < m; ++k) {
    const double u = uniform01(rng) * total;
    const auto idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    const Patch& patch = s[std::min(idx, s.size() - 1)];
    const SurfacePoint sp = patch.sample(rng);
    out.points.push_back(rot * sp.p);
    out.normals.push_back(rot * sp.n);
    out.parts.push_back(patch.part);
  }
  return out;
}

DenseSample generate_dense(const BenchmarkSpec& spec, int label, Rng& rng) {
  const Surface surface = spec.segmentation ? chair_surface(rng) : primitive_surface(static_cast<Primitive>(label), rng);
  const double yaw = 2.0 * kPi * uniform01(rng);
  return sample_surface(surface, static_cast<std::size_t>(spec.points) * static_cast<std::size_t>(spec.oversample), yaw, rng);
}

Sample to_sample(const BenchmarkSpec& spec, int label, const DenseSample& dense, const std::vector<std::size_t>& keep) {
  Sample s;
  std::vector<Vec3> pts;
  for (std::size_t i : keep) pts.push_back(dense.points[i]);
  s.cloud = PointCloud::from_points(pts);
  if (spec.segmentation) {
    for (std::size_t i : keep) s.point_labels.push_back(dense.parts[i]);
  } else {
    s.label = label;
  }
  return s;
}

/// Round coordinates through float so in-memory data equals what an archive stores.
PointCloud quantize(const PointCloud& c) {
  PointMatrix m = c.points();
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  return PointCloud(std::move(m));
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

Sample generate_clean(const BenchmarkSpec& spec, int label, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const DenseSample dense = generate_dense(spec, label, rng);
  Sample s = prepare_sample(to_sample(spec, label, dense, all_indices(dense.points.size())),
                            static_cast<std::size_t>(spec.points), derive_seed(seed, {1}));
  s.cloud = quantize(s.cloud);
  return s;
}

Sample generate_corrupted(const BenchmarkSpec& spec, int label, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const DenseSample dense = generate_dense(spec, label, rng);
  const std::size_t m = dense.points.size();
  const PointCloud dense_cloud = PointCloud::from_points(dense.points);

  std::vector<char> alive(m, 1);
  // Single-view visibility: keep each point with probability max(0, <n, view>).
  if (uniform01(rng) < spec.view_visibility) {
    const double az = 2.0 * kPi * uniform01(rng);
    const Vec3 view = Vec3(std::cos(az), std::sin(az), uniform(rng, 0.1, 0.8)).normalized();
    const auto probs = lambertian_probabilities(dense.normals, view);
    for (std::size_t i = 0; i < m; ++i)
      if (!(uniform01(rng) < probs[i])) alive[i] = 0;
  }
  // Missing chunk: the smaller side of a random plane, capped.
  if (spec.missing_fraction > 0.0) {
    Vec3 normal(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    normal.normalize();
    const double offset = uniform(rng, 0.1, 0.4);
    auto region = split_select(dense_cloud, normal, offset, 0.0, rng());
    region = cap_region(std::move(region), m, spec.missing_fraction, rng());
    for (std::size_t i : region) alive[i] = 0;
  }
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < m; ++i)
    if (alive[i]) survivors.push_back(i);
  if (survivors.size() < 8) survivors = all_indices(m);  // pathological view: fall back to the full scan

  // Sparse, uneven sampling: a random subset, padded back to n by duplication.
  const auto keep_count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.sparsity * spec.points)), 1, survivors.size());
  const auto pick = sample_without_replacement(rng, survivors.size(), keep_count);
  std::vector<std::size_t> keep;
  for (std::size_t k : pick) keep.push_back(survivors[k]);
  std::sort(keep.begin(), keep.end());

  Sample s = prepare_sample(to_sample(spec, label, dense, keep), static_cast<std::size_t>(spec.points),
                            derive_seed(seed, {1}));
  if (spec.target_noise > 0.0) s.cloud = jitter(s.cloud, spec.target_noise, 3.0 * spec.target_noise, derive_seed(seed, {2}));
  s.cloud = quantize(s.cloud);
  return s;
}

Benchmark gen_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int classes = spec.segmentation ? kSegmentationParts : spec.num_classes;
  Benchmark b;
  b.source.name = "source";
  b.target.name = "target";
  b.source.num_classes = b.target.num_classes = classes;

  auto fill = [&](Dataset& d, std::uint64_t domain, int count, Split split, bool corrupt) {
    for (int i = 0; i < count; ++i) {
      const int label = spec.segmentation ? -1 : i % classes;
      // Instance seeds are disjoint across domains and splits.
      const std::uint64_t s = derive_seed(seed, {domain, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(i)});
      d.samples.push_back(corrupt ? generate_corrupted(spec, label, s) : generate_clean(spec, label, s));
      d.splits.push_back(split);
    }
  };
  fill(b.source, 1, spec.source_train, Split::Train, false);
  fill(b.source, 1, spec.source_test, Split::Test, false);
  fill(b.target, 2, spec.target_train, Split::Train, true);
  fill(b.target, 2, spec.target_test, Split::Test, true);
  return b;
}

}  // namespace defrec
