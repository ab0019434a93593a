#pragma once

#include <Eigen/Dense>

#include <vector>

namespace dif::geometry {

struct Neighbor {
  int index = -1;
  double distance2 = 0;
};

/// Balanced kd-tree over a fixed 3 x N point set. Queries are exact; equal
/// distances are ordered by lower point index. The point matrix is copied.
class NnIndex {
 public:
  NnIndex() = default;
  explicit NnIndex(const Eigen::Matrix3Xd& points);

  std::size_t size() const { return static_cast<std::size_t>(points_.cols()); }
  const Eigen::Matrix3Xd& points() const { return points_; }

  /// min(k, size()) nearest points, closest first.
  std::vector<Neighbor> query(const Eigen::Vector3d& q, int k) const;
  Neighbor nearest(const Eigen::Vector3d& q) const;

 private:
  struct Node {
    int begin = 0, end = 0;  // range in order_
    int axis = -1;           // -1 for a leaf
    double split = 0;
    int left = -1, right = -1;
  };
  int build(int begin, int end, int depth);

  Eigen::Matrix3Xd points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Reference k-NN by exhaustive scan with the same ordering rule.
std::vector<Neighbor> brute_force_knn(const Eigen::Matrix3Xd& points, const Eigen::Vector3d& q, int k);

}  // namespace dif::geometry
