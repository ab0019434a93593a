#include "dif/geometry/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

namespace dif::geometry {

namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance2 < b.distance2 || (a.distance2 == b.distance2 && a.index < b.index);
}

constexpr int kLeafSize = 12;

}  // namespace

NnIndex::NnIndex(const Eigen::Matrix3Xd& points) : points_(points) {
  order_.resize(static_cast<std::size_t>(points.cols()));
  std::iota(order_.begin(), order_.end(), 0);
  if (points.cols() > 0) build(0, static_cast<int>(points.cols()), 0);
}

int NnIndex::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.col(order_[i]));
    hi = hi.cwiseMax(points_.col(order_[i]));
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    return points_(axis, a) < points_(axis, b) || (points_(axis, a) == points_(axis, b) && a < b);
  });
  nodes_[id].axis = axis;
  nodes_[id].split = points_(axis, order_[mid]);
  const int l = build(begin, mid, depth + 1);
  const int r = build(mid, end, depth + 1);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

std::vector<Neighbor> NnIndex::query(const Eigen::Vector3d& q, int k) const {
  k = std::min<int>(k, static_cast<int>(size()));
  if (k <= 0) return {};
  // Max-heap of the current best k under the (distance, index) order.
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(&closer)> heap(&closer);
  auto worst = [&]() { return heap.size() < static_cast<std::size_t>(k) ? 1e300 : heap.top().distance2; };
  auto visit = [&](auto&& self, int id) -> void {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const Neighbor cand{order_[i], (points_.col(order_[i]) - q).squaredNorm()};
        if (heap.size() < static_cast<std::size_t>(k)) {
          heap.push(cand);
        } else if (closer(cand, heap.top())) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    const double diff = q(n.axis) - n.split;
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    self(self, near);
    // Equal distances must still be explored for the index tie-break.
    if (diff * diff <= worst()) self(self, far);
  };
  visit(visit, 0);
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

Neighbor NnIndex::nearest(const Eigen::Vector3d& q) const {
  const auto r = query(q, 1);
  return r.empty() ? Neighbor{} : r.front();
}

std::vector<Neighbor> brute_force_knn(const Eigen::Matrix3Xd& points, const Eigen::Vector3d& q, int k) {
  std::vector<Neighbor> all;
  all.reserve(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index i = 0; i < points.cols(); ++i) all.push_back({static_cast<int>(i), (points.col(i) - q).squaredNorm()});
  std::sort(all.begin(), all.end(), closer);
  all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(std::max(k, 0))));
  return all;
}

}  // namespace dif::geometry
