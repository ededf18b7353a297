#include "defrec/pcm.hpp"

#include <cmath>

#include "defrec/errors.hpp"
#include "defrec/rng.hpp"

namespace defrec {
namespace {

struct Draw {
  double gamma;
  std::vector<std::size_t> from_a;
  std::vector<std::size_t> from_b;
};

Draw draw_split(std::size_t n, double alpha, double beta, std::uint64_t seed, std::optional<double> forced) {
  Rng rng = make_rng(seed);
  double gamma = 0.0;
  if (forced) {
    if (!(*forced >= 0.0 && *forced <= 1.0)) throw InvalidArgument("mixup coefficient must lie in [0, 1]");
    gamma = *forced;
  } else {
    gamma = sample_beta(rng, alpha, beta);
  }
  const auto m = static_cast<std::size_t>(std::llround(gamma * static_cast<double>(n)));
  Draw d{gamma, sample_without_replacement(rng, n, m), sample_without_replacement(rng, n, n - m)};
  return d;
}

PointMatrix stack(const PointCloud& a, const PointCloud& b, const Draw& d) {
  PointMatrix out(static_cast<Eigen::Index>(d.from_a.size() + d.from_b.size()), 3);
  Eigen::Index row = 0;
  for (std::size_t i : d.from_a) out.row(row++) = a.points().row(static_cast<Eigen::Index>(i));
  for (std::size_t i : d.from_b) out.row(row++) = b.points().row(static_cast<Eigen::Index>(i));
  return out;
}

std::vector<std::size_t> provenance(const Draw& d) {
  std::vector<std::size_t> out = d.from_a;
  out.insert(out.end(), d.from_b.begin(), d.from_b.end());
  return out;
}

}  // namespace

MixedSample pcm_classify(const LabeledCloud& a, const LabeledCloud& b, int num_classes, double alpha, double beta,
                         std::uint64_t seed, std::optional<double> forced_gamma) {
  const std::size_t n = a.cloud.size();
  if (b.cloud.size() != n) throw InvalidArgument("mixup inputs differ in point count");
  validate_label(a, num_classes);
  validate_label(b, num_classes);

  const Draw d = draw_split(n, alpha, beta, seed, forced_gamma);
  MixedSample out;
  out.cloud = PointCloud(stack(a.cloud, b.cloud, d));
  out.gamma = d.gamma;
  out.from_first = d.from_a.size();
  out.realized_gamma = static_cast<double>(out.from_first) / static_cast<double>(n);
  out.soft_label.assign(static_cast<std::size_t>(num_classes), 0.0);
  out.soft_label[static_cast<std::size_t>(a.label)] += out.realized_gamma;
  out.soft_label[static_cast<std::size_t>(b.label)] += 1.0 - out.realized_gamma;
  out.source_index = provenance(d);
  return out;
}

MixedSample pcm_segment(const SegLabeledCloud& a, const SegLabeledCloud& b, double alpha, double beta,
                        std::uint64_t seed, std::optional<double> forced_gamma) {
  const std::size_t n = a.cloud.size();
  if (b.cloud.size() != n) throw InvalidArgument("mixup inputs differ in point count");
  if (a.labels.size() != n || b.labels.size() != n) throw DataError("per-point label count does not match point count");

  const Draw d = draw_split(n, alpha, beta, seed, forced_gamma);
  MixedSample out;
  out.cloud = PointCloud(stack(a.cloud, b.cloud, d));
  out.gamma = d.gamma;
  out.from_first = d.from_a.size();
  out.realized_gamma = static_cast<double>(out.from_first) / static_cast<double>(n);
  out.labels.reserve(n);
  for (std::size_t i : d.from_a) out.labels.push_back(a.labels[i]);
  for (std::size_t i : d.from_b) out.labels.push_back(b.labels[i]);
  out.source_index = provenance(d);
  return out;
}

}  // namespace defrec
