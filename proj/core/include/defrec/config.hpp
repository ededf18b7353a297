#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defrec/training.hpp"

namespace defrec {

/// Lists over lambda / lr / weight_decay; an empty list keeps the base value.
struct GridSpec {
  std::vector<double> lambda;
  std::vector<double> lr;
  std::vector<double> weight_decay;
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Everything the `train` command needs, read from one JSON file.
struct RunConfig {
  TrainConfig train;
  std::string run_id = "run";
  std::string source_path;       ///< labeled source archive
  std::string target_path;       ///< target archive (labels ignored for training)
  std::string target_test_path;  ///< optional labeled target archive for evaluation
  std::string out_dir;
  int points = 0;  ///< 0 means the task default: 1024 classification, 2048 segmentation
  GridSpec grid;

  int resolved_points() const;
};

/// Parse and schema-validate. Unknown keys, wrong types and out-of-range
/// values throw InvalidArgument naming the offending key path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Canonical JSON with every field present; parse(serialize(c)) == c.
std::string serialize_run_config(const RunConfig& config);

bool operator==(const RunConfig& a, const RunConfig& b);

/// One TrainConfig per grid point, in lambda-major order.
std::vector<TrainConfig> expand_grid(const RunConfig& config);

std::string to_string(Task task);
std::string to_string(DefRecOn on);
std::string to_string(SampleScheme scheme);

}  // namespace defrec
