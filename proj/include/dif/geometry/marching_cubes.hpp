#pragma once

#include "dif/geometry/mesh.hpp"

#include <array>
#include <functional>
#include <vector>

namespace dif::geometry {

/// Scalar values on a regular lattice spanning [lo, hi]; index i + nx (j + ny k).
struct GridField {
  std::array<int, 3> res{0, 0, 0};
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);
  std::vector<double> values;

  static GridField cube(int resolution, double half_extent = 1.0);

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(res[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(res[1]) * static_cast<std::size_t>(k));
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 spacing() const { return (hi - lo).cwiseQuotient(Vec3(res[0] - 1, res[1] - 1, res[2] - 1)); }
  Vec3 point(int i, int j, int k) const { return lo + spacing().cwiseProduct(Vec3(i, j, k)); }
  std::size_t size() const { return static_cast<std::size_t>(res[0]) * res[1] * res[2]; }
  /// All lattice points as a 3 x size() matrix in index order.
  Eigen::Matrix3Xd lattice() const;
  /// Fills values from a field evaluated on the whole lattice at once.
  void fill(const std::function<Eigen::VectorXd(const Eigen::Matrix3Xd&)>& field);
  /// Trilinear interpolation (clamped to the grid).
  double interpolate(const Vec3& p) const;
  void validate() const;
};

/// Level-set triangulation with shared (welded) edge vertices. Triangles are
/// wound so their normals point toward increasing values.
TriMesh marching_cubes(const GridField& grid, double level = 0.0);

}  // namespace dif::geometry
