//
// Median-split kd-tree over 3D points: nearest neighbor under L2 or L1,
// k-nearest, and radius queries. Indices refer to the input point order.
//

#pragma once

#include <algorithm>
#include <queue>
#include <vector>

#include "locadit/core.hpp"

namespace locadit {

class KdTree3 {
 public:
  KdTree3() = default;

  explicit KdTree3(const std::vector<Vec3>& points) : pts_(points) {
    order_.resize(pts_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    nodes_.reserve(pts_.size() / kLeafSize * 2 + 4);
    if (!pts_.empty()) root_ = build(0, pts_.size());
  }

  size_t size() const { return pts_.size(); }

  /// Index of the L2-nearest point; squared distance in *dist2_out if given.
  size_t nearest_l2(const Vec3& q, double* dist2_out = nullptr) const {
    size_t best = size_t(-1);
    double best_d = std::numeric_limits<double>::max();
    search_nn<false>(root_, q, best, best_d);
    if (dist2_out) *dist2_out = best_d;
    return best;
  }

  /// Index of the L1-nearest point; L1 distance in *dist_out if given.
  size_t nearest_l1(const Vec3& q, double* dist_out = nullptr) const {
    size_t best = size_t(-1);
    double best_d = std::numeric_limits<double>::max();
    search_nn<true>(root_, q, best, best_d);
    if (dist_out) *dist_out = best_d;
    return best;
  }

  /// k nearest under L2, closest first.
  std::vector<size_t> knearest(const Vec3& q, size_t k) const {
    if (k == 0 || pts_.empty()) return {};
    k = std::min(k, pts_.size());
    // max-heap of (dist2, index)
    std::priority_queue<std::pair<double, size_t>> heap;
    search_knn(root_, q, k, heap);
    std::vector<size_t> out(heap.size());
    for (size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top().second;
      heap.pop();
    }
    return out;
  }

  /// All indices with L2 distance <= r.
  std::vector<size_t> radius(const Vec3& q, double r) const {
    std::vector<size_t> out;
    if (!pts_.empty()) search_radius(root_, q, r * r, out);
    return out;
  }

 private:
  static constexpr size_t kLeafSize = 12;
  static constexpr int kNone = -1;

  struct Node {
    int left = kNone, right = kNone;
    int axis = 0;
    double split = 0;
    uint32_t begin = 0, end = 0;  // leaf range into order_
    bool leaf() const { return left == kNone && right == kNone; }
  };

  std::vector<Vec3> pts_;
  std::vector<size_t> order_;
  std::vector<Node> nodes_;
  int root_ = kNone;

  int build(size_t begin, size_t end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = uint32_t(begin);
      node.end = uint32_t(end);
      nodes_.push_back(node);
      return int(nodes_.size() - 1);
    }
    Bounds3 bb;
    for (size_t i = begin; i < end; ++i) bb.expand(pts_[order_[i]]);
    Vec3 ext = bb.size();
    int axis = 0;
    if (ext.y > ext[axis]) axis = 1;
    if (ext.z > ext[axis]) axis = 2;
    size_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](size_t a, size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    node.axis = axis;
    node.split = pts_[order_[mid]][axis];
    nodes_.push_back(node);
    int id = int(nodes_.size() - 1);
    int l = build(begin, mid);
    int r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  static double dist2(const Vec3& a, const Vec3& b) { return norm2(a - b); }
  static double dist1(const Vec3& a, const Vec3& b) { return norm_l1(a - b); }

  template <bool L1>
  void search_nn(int id, const Vec3& q, size_t& best, double& best_d) const {
    const Node& n = nodes_[id];
    if (n.leaf()) {
      for (uint32_t i = n.begin; i < n.end; ++i) {
        size_t p = order_[i];
        double d = L1 ? dist1(q, pts_[p]) : dist2(q, pts_[p]);
        if (d < best_d) {
          best_d = d;
          best = p;
        }
      }
      return;
    }
    double delta = q[n.axis] - n.split;
    int near = delta < 0 ? n.left : n.right;
    int far = delta < 0 ? n.right : n.left;
    search_nn<L1>(near, q, best, best_d);
    // |delta| lower-bounds the distance to the far half-space in both metrics
    double gap = L1 ? std::abs(delta) : delta * delta;
    if (gap < best_d) search_nn<L1>(far, q, best, best_d);
  }

  void search_knn(int id, const Vec3& q, size_t k,
                  std::priority_queue<std::pair<double, size_t>>& heap) const {
    const Node& n = nodes_[id];
    if (n.leaf()) {
      for (uint32_t i = n.begin; i < n.end; ++i) {
        size_t p = order_[i];
        double d = dist2(q, pts_[p]);
        if (heap.size() < k) {
          heap.emplace(d, p);
        } else if (d < heap.top().first) {
          heap.pop();
          heap.emplace(d, p);
        }
      }
      return;
    }
    double delta = q[n.axis] - n.split;
    int near = delta < 0 ? n.left : n.right;
    int far = delta < 0 ? n.right : n.left;
    search_knn(near, q, k, heap);
    if (heap.size() < k || delta * delta < heap.top().first) search_knn(far, q, k, heap);
  }

  void search_radius(int id, const Vec3& q, double r2, std::vector<size_t>& out) const {
    const Node& n = nodes_[id];
    if (n.leaf()) {
      for (uint32_t i = n.begin; i < n.end; ++i) {
        size_t p = order_[i];
        if (dist2(q, pts_[p]) <= r2) out.push_back(p);
      }
      return;
    }
    double delta = q[n.axis] - n.split;
    int near = delta < 0 ? n.left : n.right;
    int far = delta < 0 ? n.right : n.left;
    search_radius(near, q, r2, out);
    if (delta * delta <= r2) search_radius(far, q, r2, out);
  }
};

}  // namespace locadit
