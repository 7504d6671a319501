#pragma once

#include <limits>
#include <numeric>
#include <span>

#include "vrn/mesh.hpp"

namespace vrn {

// Exact nearest-neighbour search over a fixed 3D point set. Ties on distance
// resolve to the lowest point index, matching a linear scan.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) throw EmptyMeshError("KdTree over an empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, order_.size());
  }

  struct Result {
    std::uint32_t index = 0;
    double dist2 = std::numeric_limits<double>::infinity();
  };

  Result nearest(const Vec3& q) const {
    Result best;
    search(0, q, best);
    return best;
  }

  std::size_t size() const { return points_.size(); }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::uint32_t begin = 0, end = 0;
    int axis = -1;  // -1 for leaves
    double split = 0;
    std::uint32_t left = 0, right = 0;
    Vec3 lo, hi;  // bounding box of the node's points
  };

  std::uint32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({});
    Node node;
    node.begin = static_cast<std::uint32_t>(begin);
    node.end = static_cast<std::uint32_t>(end);
    Bounds b;
    for (std::size_t i = begin; i < end; ++i) b.extend(points_[order_[i]]);
    node.lo = b.lo;
    node.hi = b.hi;
    if (end - begin > kLeafSize) {
      int axis;
      b.extent().maxCoeff(&axis);
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                       [&](std::uint32_t a, std::uint32_t c) {
                         const double pa = points_[a][axis], pc = points_[c][axis];
                         return pa < pc || (pa == pc && a < c);
                       });
      node.axis = axis;
      node.split = points_[order_[mid]][axis];
      node.left = build(begin, mid);
      node.right = build(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  static double box_dist2(const Node& n, const Vec3& q) {
    const Vec3 d = (n.lo - q).cwiseMax(q - n.hi).cwiseMax(Vec3::Zero());
    return d.squaredNorm();
  }

  void search(std::uint32_t id, const Vec3& q, Result& best) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, q) > best.dist2) return;
    if (n.axis < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t p = order_[i];
        const double d2 = (points_[p] - q).squaredNorm();
        if (d2 < best.dist2 || (d2 == best.dist2 && p < best.index)) best = {p, d2};
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    search(go_left ? n.left : n.right, q, best);
    search(go_left ? n.right : n.left, q, best);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace vrn
