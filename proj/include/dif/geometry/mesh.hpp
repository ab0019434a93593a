#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dif::geometry {

using Vec3 = Eigen::Vector3d;
using Tri = Eigen::Vector3i;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Tri> triangles;
  std::vector<Eigen::Vector3f> colors;  // empty or one per vertex, components in [0,1]
  std::vector<int> labels;              // empty or one per vertex

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_triangles() const { return triangles.size(); }
  bool empty() const { return triangles.empty(); }

  Vec3 corner(std::size_t t, int c) const { return vertices[static_cast<std::size_t>(triangles[t](c))]; }
  double area(std::size_t t) const;
  /// Unit normal by right-hand winding (zero for degenerate triangles).
  Vec3 face_normal(std::size_t t) const;
  int face_label(std::size_t t) const { return labels.empty() ? -1 : labels[static_cast<std::size_t>(triangles[t](0))]; }

  double surface_area() const;
  /// Signed enclosed volume (positive for outward winding).
  double signed_volume() const;
  /// Throws std::invalid_argument if an index is out of range or attribute sizes disagree.
  void validate() const;
  /// Appends another mesh (indices shifted).
  void append(const TriMesh& other);
};

class MeshFormatError : public std::runtime_error {
 public:
  MeshFormatError(const std::string& path, int line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// OBJ with v [r g b], vn, vt and f records; polygons are fan-triangulated and
/// zero-area triangles dropped.
TriMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path);

/// Removes triangles with repeated indices or zero area.
std::size_t remove_degenerate(TriMesh& mesh);

/// Area-weighted centroid of the surface.
Vec3 surface_centroid(const TriMesh& mesh);

struct Similarity {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;
  Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
};

/// Radius of the bounding sphere after normalization.
inline constexpr double kNormalizedRadius = 1.0 / 1.03;

/// Moves the surface centroid to the origin and scales the farthest vertex to
/// radius 1/1.03. Returns the applied transform.
Similarity normalize_mesh(TriMesh& mesh);

/// Every edge shared by exactly two triangles.
bool is_closed(const TriMesh& mesh);

/// Geodesic sphere from a subdivided icosahedron; all vertices lie on the sphere.
TriMesh icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero());

/// Connected components by shared vertices; returns a component id per triangle.
std::vector<int> triangle_components(const TriMesh& mesh, int* count = nullptr);

}  // namespace dif::geometry
