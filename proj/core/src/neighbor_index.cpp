#include "defrec/neighbor_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "defrec/errors.hpp"

namespace defrec {
namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
}

struct Closer {
  bool operator()(const Neighbor& a, const Neighbor& b) const { return closer(a, b); }
};

// Max-heap on (dist2, index): top() is the current worst of the k best.
using BestK = std::priority_queue<Neighbor, std::vector<Neighbor>, Closer>;

}  // namespace

NeighborIndex::NeighborIndex(const PointMatrix& points, std::size_t leaf_size)
    : points_(points), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  if (points_.rows() == 0) throw InvalidArgument("neighbor index over empty point set");
  order_.resize(static_cast<std::size_t>(points_.rows()));
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * order_.size() / leaf_size_ + 1);
  build(0, static_cast<std::uint32_t>(order_.size()));
}

std::int32_t NeighborIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{});
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    const Vec3 p = points_.row(order_[i]).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident; keep as a leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_(a, axis) < points_(b, axis); });
  const double split = points_(order_[mid], axis);
  // Left holds coordinates <= split, right holds >= split; the pruning test
  // below only relies on that ordering.
  nodes_[id].axis = static_cast<std::uint8_t>(axis);
  nodes_[id].split = split;
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<Neighbor> NeighborIndex::knn(const Vec3& query, std::size_t k) const {
  k = std::min(k, size());
  if (k == 0) return {};
  BestK best;
  const double q[3] = {query[0], query[1], query[2]};
  const double* base = points_.data();

  // Explicit stack; far children are visited only if their slab can still
  // contain a point at least as close as the current k-th best.
  struct Frame {
    std::int32_t node;
    double bound;
  };
  std::vector<Frame> stack;
  stack.push_back({0, 0.0});
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    if (best.size() == k && f.bound > best.top().dist2) continue;
    const Node& node = nodes_[f.node];
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], squared_distance(q, base + 3 * order_[i])};
        if (best.size() < k) {
          best.push(cand);
        } else if (closer(cand, best.top())) {
          best.pop();
          best.push(cand);
        }
      }
      continue;
    }
    const double diff = q[node.axis] - node.split;
    const double far_bound = std::max(f.bound, diff * diff);
    const std::int32_t near_child = diff <= 0.0 ? node.left : node.right;
    const std::int32_t far_child = diff <= 0.0 ? node.right : node.left;
    stack.push_back({far_child, far_bound});
    stack.push_back({near_child, f.bound});
  }

  std::vector<Neighbor> out(best.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = best.top();
    best.pop();
  }
  return out;
}

Neighbor NeighborIndex::nearest(const Vec3& query) const { return knn(query, 1).front(); }

std::vector<std::size_t> NeighborIndex::radius(const Vec3& query, double radius) const {
  std::vector<std::size_t> out;
  if (radius < 0.0) return out;
  const double r2 = radius * radius;
  const double q[3] = {query[0], query[1], query[2]};
  const double* base = points_.data();
  std::vector<std::int32_t> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        if (squared_distance(q, base + 3 * order_[i]) <= r2) out.push_back(order_[i]);
      }
      continue;
    }
    const double diff = q[node.axis] - node.split;
    if (diff <= 0.0 || diff * diff <= r2) stack.push_back(node.left);
    if (diff >= 0.0 || diff * diff <= r2) stack.push_back(node.right);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Neighbor> knn_exhaustive(const Eigen::MatrixXd& rows, Eigen::Index query_row, std::size_t k) {
  const auto n = static_cast<std::size_t>(rows.rows());
  std::vector<Neighbor> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    all[i] = {i, (rows.row(static_cast<Eigen::Index>(i)) - rows.row(query_row)).squaredNorm()};
  }
  k = std::min(k, n);
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
  all.resize(k);
  return all;
}

}  // namespace defrec
