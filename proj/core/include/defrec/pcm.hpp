#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "defrec/pointcloud.hpp"

namespace defrec {

/// Point Cloud Mixup output.
///
/// The first `from_first` points come from the first input, the rest from the
/// second. Classification fills `soft_label`; segmentation fills `labels`.
struct MixedSample {
  PointCloud cloud;
  std::vector<double> soft_label;
  std::vector<int> labels;
  double gamma = 0.0;           ///< the Beta draw
  double realized_gamma = 0.0;  ///< from_first / n, used for the soft label
  std::size_t from_first = 0;
  std::vector<std::size_t> source_index;  ///< row in its source cloud, per output point
};

inline constexpr double kPcmAlpha = 1.0;
inline constexpr double kPcmBeta = 1.0;

/// Mix two equally sized clouds: gamma ~ Beta(alpha, beta), round(gamma * n)
/// points drawn without replacement from `a`, the rest from `b`. The soft
/// label weights the two one-hot labels by the realized fraction.
/// `forced_gamma` bypasses the Beta draw.
MixedSample pcm_classify(const LabeledCloud& a, const LabeledCloud& b, int num_classes, double alpha, double beta,
                         std::uint64_t seed, std::optional<double> forced_gamma = std::nullopt);

/// Segmentation mixup: same point sampling, each point keeps its own label.
MixedSample pcm_segment(const SegLabeledCloud& a, const SegLabeledCloud& b, double alpha, double beta,
                        std::uint64_t seed, std::optional<double> forced_gamma = std::nullopt);

}  // namespace defrec
