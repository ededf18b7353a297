#pragma once

#include <filesystem>
#include <string>

#include "defrec/pointcloud.hpp"
#include "defrec/rng.hpp"

namespace defrec::test {

inline PointMatrix random_points(Rng& rng, std::size_t n, double lo = -0.5, double hi = 0.5) {
  PointMatrix m(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * uniform01(rng);
  return m;
}

inline PointCloud random_cloud(Rng& rng, std::size_t n) { return PointCloud(random_points(rng, n)); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("defrec_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace defrec::test
