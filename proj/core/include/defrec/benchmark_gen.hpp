#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defrec/cloud_io.hpp"

namespace defrec {

/// Primitive classes, in class-index order.
enum class Primitive { Box, Cylinder, Cone, Torus, Ellipsoid, Pyramid };
inline constexpr int kPrimitiveCount = 6;
std::string to_string(Primitive p);

/// Parts of the segmentation object (a chair-like assembly).
inline constexpr int kSegmentationParts = 4;  // seat, back, legs, arms

struct BenchmarkSpec {
  bool segmentation = false;
  int num_classes = 3;  ///< classification only: the first C primitives
  int source_train = 200;
  int source_test = 60;
  int target_train = 200;
  int target_test = 150;
  int points = 256;
  int oversample = 4;  ///< dense surface samples per output point before resampling

  // Target corruption: single-view visibility, a missing chunk, sparse sampling and noise.
  double view_visibility = 1.0;     ///< probability of applying the Lambertian visibility mask
  double missing_fraction = 0.25;   ///< cap on the chunk removed by a split plane
  double sparsity = 0.35;           ///< surviving points kept, as a fraction of `points`
  double target_noise = 0.01;

  void validate() const;
};

struct Benchmark {
  Dataset source;  ///< splits Train / Test
  Dataset target;  ///< splits Train / Test; labels kept for evaluation only
};

Benchmark gen_benchmark(const BenchmarkSpec& spec, std::uint64_t seed);

/// One clean source-style instance (exposed for tests and the CLI).
Sample generate_clean(const BenchmarkSpec& spec, int label, std::uint64_t seed);
/// One corrupted target-style instance.
Sample generate_corrupted(const BenchmarkSpec& spec, int label, std::uint64_t seed);

}  // namespace defrec
