#pragma once

#include "dif/geometry/bvh.hpp"
#include "dif/geometry/mesh.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace dif::geometry {

/// Samples of one shape in double precision. labels is empty for unlabeled meshes.
struct ShapeSamples {
  Eigen::Matrix3Xd surface;
  Eigen::Matrix3Xd normals;
  std::vector<int> labels;
  Eigen::Matrix3Xd free;
  Eigen::VectorXd sdf;
};

/// n nearly uniform unit directions (Fibonacci lattice).
std::vector<Vec3> fibonacci_directions(int n);

inline constexpr int kViewCount = 100;

/// Visibility from a set of directional viewpoints. A point is seen from d when
/// the ray p + t d, t > 0, leaves the mesh's bounds without crossing it.
class ViewSet {
 public:
  explicit ViewSet(const TriMesh& mesh, int views = kViewCount);

  /// Index of the first view that sees p, or -1.
  int first_view(const Vec3& p) const;
  /// First view that sees the surface point p on the side of normal n; returns
  /// -1 or the view index and sets `side` to +1 (front of n) or -1 (back).
  int first_view_of_surface(const Vec3& p, const Vec3& n, int* side) const;
  const std::vector<Vec3>& directions() const { return dirs_; }
  const Bvh& bvh() const { return bvh_; }

 private:
  Bvh bvh_;
  std::vector<Vec3> dirs_;
  double reach_;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Area-weighted points on the externally visible surface with unit normals
/// facing the viewpoint that saw them. Labels follow face labels if present.
/// Throws SamplingError if no visible surface is found.
ShapeSamples sample_surface(const TriMesh& mesh, int count, std::mt19937_64& rng, int views = kViewCount);

/// Uniform points in [-1,1]^3. |sdf| is the distance to the nearest of
/// `surface`; the sign is positive iff some viewpoint sees the point.
void sample_free(const TriMesh& mesh, const Eigen::Matrix3Xd& surface, int count, std::mt19937_64& rng, Eigen::Matrix3Xd& points,
                 Eigen::VectorXd& sdf, int views = kViewCount);

/// Signed distances of arbitrary points under the same rule as sample_free.
Eigen::VectorXd visibility_sdf(const TriMesh& mesh, const Eigen::Matrix3Xd& surface, const Eigen::Matrix3Xd& points,
                               int views = kViewCount);

/// Both sample kinds; the free-space distances use the surface samples drawn here.
ShapeSamples sample_shape(const TriMesh& mesh, int surface_count, int free_count, std::uint64_t seed, int views = kViewCount);

/// Area-weighted uniform points on every triangle (no visibility test).
Eigen::Matrix3Xd sample_uniform(const TriMesh& mesh, int count, std::mt19937_64& rng, std::vector<int>* triangles = nullptr);

}  // namespace dif::geometry
