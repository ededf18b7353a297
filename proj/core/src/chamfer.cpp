#include "defrec/chamfer.hpp"

#include "defrec/errors.hpp"
#include "defrec/neighbor_index.hpp"

namespace defrec {
namespace {

PointMatrix gather(const PointMatrix& m, const std::vector<std::size_t>& rows) {
  PointMatrix out(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

double directed(const PointMatrix& from, const NeighborIndex& to) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) sum += to.nearest(from.row(i).transpose()).dist2;
  return sum;
}

}  // namespace

double chamfer_distance(const PointMatrix& a, const PointMatrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InvalidArgument("chamfer undefined for empty set");
  const NeighborIndex index_a(a);
  const NeighborIndex index_b(b);
  return directed(a, index_b) + directed(b, index_a);
}

ChamferResult chamfer_loss_region(const PointMatrix& pred, const PointMatrix& target,
                                  const std::vector<std::size_t>& region) {
  if (region.empty()) throw InvalidArgument("empty deformation region");
  if (pred.rows() != target.rows()) throw InvalidArgument("prediction and target differ in point count");
  for (std::size_t i : region) {
    if (static_cast<Eigen::Index>(i) >= pred.rows()) throw InvalidArgument("region index out of range");
  }

  const PointMatrix t = gather(target, region);
  const PointMatrix p = gather(pred, region);
  const NeighborIndex index_t(t);
  const NeighborIndex index_p(p);

  ChamferResult result;
  result.grad_pred = PointMatrix::Zero(pred.rows(), 3);
  PointMatrix grad_local = PointMatrix::Zero(p.rows(), 3);

  // targets -> nearest prediction
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    const Neighbor nb = index_p.nearest(t.row(i).transpose());
    result.value += nb.dist2;
    const auto j = static_cast<Eigen::Index>(nb.index);
    grad_local.row(j) += 2.0 * (p.row(j) - t.row(i));
  }
  // predictions -> nearest target
  for (Eigen::Index j = 0; j < p.rows(); ++j) {
    const Neighbor nb = index_t.nearest(p.row(j).transpose());
    result.value += nb.dist2;
    grad_local.row(j) += 2.0 * (p.row(j) - t.row(static_cast<Eigen::Index>(nb.index)));
  }

  for (std::size_t k = 0; k < region.size(); ++k) {
    result.grad_pred.row(static_cast<Eigen::Index>(region[k])) += grad_local.row(static_cast<Eigen::Index>(k));
  }
  return result;
}

}  // namespace defrec
