#pragma once

#include <cstddef>
#include <vector>

#include "defrec/pointcloud.hpp"

namespace defrec {

struct ChamferResult {
  double value = 0.0;
  /// d value / d pred, same shape as the prediction; zero outside the region.
  PointMatrix grad_pred;
};

/// Symmetric Chamfer distance: sum over a of min_b |a-b|^2 plus sum over b
/// of min_a |b-a|^2 (sums, not means). Nearest neighbors come from a k-d tree.
double chamfer_distance(const PointMatrix& a, const PointMatrix& b);

/// Chamfer distance between target rows and prediction rows restricted to
/// `region`, with its exact gradient with respect to the prediction. Each
/// selected prediction receives 2(p - t) from its own nearest target and from
/// every target that picks it as nearest. Nearest-neighbor ties resolve to the
/// lowest region position.
ChamferResult chamfer_loss_region(const PointMatrix& pred, const PointMatrix& target,
                                  const std::vector<std::size_t>& region);

}  // namespace defrec
