#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "defrec/pointcloud.hpp"

namespace defrec {

enum class Split { Train, Val, Test };

/// One stored cloud. `label` is -1 for unlabeled or per-point-labeled samples.
struct Sample {
  PointCloud cloud;
  int label = -1;
  std::vector<int> point_labels;  ///< empty unless per-point labels are present
};

/// A named collection of samples sharing a class count.
struct Dataset {
  std::string name;
  int num_classes = 0;
  std::vector<Sample> samples;
  std::vector<Split> splits;  ///< parallel to samples; empty means all Train

  bool per_point_labels() const;
  std::vector<LabeledCloud> labeled(std::optional<Split> split = std::nullopt) const;
  std::vector<SegLabeledCloud> seg_labeled(std::optional<Split> split = std::nullopt) const;
  /// Clouds only; labels are dropped.
  std::vector<PointCloud> clouds(std::optional<Split> split = std::nullopt) const;
  /// Throws DataError when labels are out of range or inconsistent.
  void validate() const;
};

struct LoadedCloud {
  PointCloud cloud;
  std::optional<std::vector<int>> labels;
};

/// Load one cloud from ASCII XYZ ("x y z[ label]" per line), ASCII PLY, or
/// sample `index` of a dataset archive. The format follows the extension
/// (.xyz/.txt/.pts, .ply, .dfrc) or, failing that, the first bytes.
LoadedCloud load_cloud(const std::filesystem::path& path, std::size_t index = 0);

LoadedCloud parse_xyz(const std::string& text);
LoadedCloud parse_ply(const std::string& text);

void save_xyz(const std::filesystem::path& path, const PointCloud& cloud, const std::vector<int>* labels = nullptr);

// Archive layout (little-endian):
//   "DFRC" | version u16 | C u16 | sample count u32 | flags u32 (bit 0: per-point labels) |
//   per sample: n u32, label i32 (-1 when absent), n*3 f32, [n i32 labels]
inline constexpr std::uint16_t kArchiveVersion = 1;

std::vector<std::uint8_t> serialize_archive(const Dataset& data);
Dataset deserialize_archive(const std::vector<std::uint8_t>& bytes, const std::string& name = "");

void save_archive(const std::filesystem::path& path, const Dataset& data);
Dataset load_archive(const std::filesystem::path& path);

/// Normalize to the unit cube and resample to exactly n points (farthest
/// point sampling when larger, seeded duplication when smaller). Labels follow
/// their points.
Sample prepare_sample(const Sample& raw, std::size_t n, std::uint64_t seed);

}  // namespace defrec
