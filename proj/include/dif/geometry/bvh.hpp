#pragma once

#include "dif/geometry/mesh.hpp"

#include <Eigen/Geometry>

#include <vector>

namespace dif::geometry {

struct ClosestHit {
  double distance2 = 0;
  Vec3 point = Vec3::Zero();
  int triangle = -1;
};

/// Bounding-volume hierarchy over a mesh's triangles (median split on the
/// longest axis). The mesh must outlive the tree.
class Bvh {
 public:
  explicit Bvh(const TriMesh& mesh);

  /// True if the open segment (a, b) crosses a triangle, ignoring hits within
  /// `skip` of either end.
  bool segment_blocked(const Vec3& a, const Vec3& b, double skip = 1e-7) const;
  /// Number of triangles crossed by the ray o + t d, t > 0.
  int count_crossings(const Vec3& o, const Vec3& d) const;
  /// Crossings of the ray o + t d, t > 0, tallied per component id.
  std::vector<int> crossings_per_component(const Vec3& o, const Vec3& d, const std::vector<int>& comp, int ncomp) const;
  ClosestHit closest(const Vec3& q) const;

  const TriMesh& mesh() const { return mesh_; }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1, right = -1;  // children, or -1 for a leaf
    int begin = 0, end = 0;     // range in order_ for leaves
  };
  int build(int begin, int end);
  template <typename Visit>
  void walk_ray(const Vec3& o, const Vec3& d, double tmax, Visit&& visit) const;

  const TriMesh& mesh_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  std::vector<Eigen::AlignedBox3d> tri_boxes_;
  std::vector<Vec3> centroids_;
};

/// Ray/triangle intersection (Moller-Trumbore); returns t or a negative value.
double ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c);
/// Closest point on triangle abc to p.
Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Inside test by ray parity, evaluated per connected component (a point is
/// inside if it is inside any closed component). Three rays vote.
class ParityOracle {
 public:
  explicit ParityOracle(const TriMesh& mesh);
  bool inside(const Vec3& p) const;

 private:
  Bvh bvh_;
  std::vector<int> comp_;
  int ncomp_ = 0;
};

}  // namespace dif::geometry
