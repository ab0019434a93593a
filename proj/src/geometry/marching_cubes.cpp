#include "dif/geometry/marching_cubes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace dif::geometry {

namespace {
#include "mc_tables.inc"

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1}, {0, 1, 0}, {1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
}  // namespace

GridField GridField::cube(int resolution, double half_extent) {
  if (resolution < 2) throw std::invalid_argument("grid resolution must be >= 2");
  GridField g;
  g.res = {resolution, resolution, resolution};
  g.lo = Vec3::Constant(-half_extent);
  g.hi = Vec3::Constant(half_extent);
  g.values.assign(g.size(), 0.0);
  return g;
}

Eigen::Matrix3Xd GridField::lattice() const {
  Eigen::Matrix3Xd pts(3, static_cast<Eigen::Index>(size()));
  for (int k = 0; k < res[2]; ++k)
    for (int j = 0; j < res[1]; ++j)
      for (int i = 0; i < res[0]; ++i) pts.col(static_cast<Eigen::Index>(index(i, j, k))) = point(i, j, k);
  return pts;
}

void GridField::fill(const std::function<Eigen::VectorXd(const Eigen::Matrix3Xd&)>& field) {
  const Eigen::VectorXd v = field(lattice());
  if (static_cast<std::size_t>(v.size()) != size()) throw std::invalid_argument("grid fill: field returned the wrong count");
  values.assign(v.data(), v.data() + v.size());
}

double GridField::interpolate(const Vec3& p) const {
  const Vec3 h = spacing();
  double f[3];
  int i0[3];
  for (int a = 0; a < 3; ++a) {
    const double x = std::clamp((p(a) - lo(a)) / h(a), 0.0, static_cast<double>(res[a] - 1));
    i0[a] = std::min(static_cast<int>(std::floor(x)), res[a] - 2);
    f[a] = x - i0[a];
  }
  double out = 0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
    if (w != 0) out += w * at(i0[0] + dx, i0[1] + dy, i0[2] + dz);
  }
  return out;
}

void GridField::validate() const {
  if (res[0] < 2 || res[1] < 2 || res[2] < 2) throw std::invalid_argument("grid resolution must be >= 2 per axis");
  if (values.size() != size()) throw std::invalid_argument("grid value count differs from the product of resolutions");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("grid contains non-finite values");
}

TriMesh marching_cubes(const GridField& grid, double level) {
  grid.validate();
  TriMesh mesh;
  std::unordered_map<std::size_t, int> edge_vertex;
  auto vertex_on = [&](int i, int j, int k, int c1, int c2) {
    // Canonical lattice edge: from the lower corner along one axis.
    int a[3] = {i + kCorner[c1][0], j + kCorner[c1][1], k + kCorner[c1][2]};
    int b[3] = {i + kCorner[c2][0], j + kCorner[c2][1], k + kCorner[c2][2]};
    if (a[0] + a[1] + a[2] > b[0] + b[1] + b[2]) std::swap(a, b);
    const int axis = b[0] != a[0] ? 0 : (b[1] != a[1] ? 1 : 2);
    const std::size_t key = grid.index(a[0], a[1], a[2]) * 3 + static_cast<std::size_t>(axis);
    auto [it, fresh] = edge_vertex.try_emplace(key, static_cast<int>(mesh.vertices.size()));
    if (fresh) {
      const double va = grid.at(a[0], a[1], a[2]), vb = grid.at(b[0], b[1], b[2]);
      const double u = va == vb ? 0.5 : (level - va) / (vb - va);
      const Vec3 pa = grid.point(a[0], a[1], a[2]), pb = grid.point(b[0], b[1], b[2]);
      mesh.vertices.push_back(pa + u * (pb - pa));
    }
    return it->second;
  };

  for (int k = 0; k + 1 < grid.res[2]; ++k)
    for (int j = 0; j + 1 < grid.res[1]; ++j)
      for (int i = 0; i + 1 < grid.res[0]; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (grid.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < level) cube |= 1 << c;
        if (kEdgeTable[cube] == 0) continue;
        int vid[12];
        for (int e = 0; e < 12; ++e)
          if (kEdgeTable[cube] & (1 << e)) vid[e] = vertex_on(i, j, k, kEdge[e][0], kEdge[e][1]);
        for (const int* t = kTriTable[cube]; *t != -1; t += 3) {
          const Tri tri(vid[t[0]], vid[t[1]], vid[t[2]]);
          if (tri(0) == tri(1) || tri(1) == tri(2) || tri(0) == tri(2)) continue;
          mesh.triangles.push_back(tri);
        }
      }
  return mesh;
}

}  // namespace dif::geometry
