#include "dif/geometry/sampling.hpp"

#include "dif/geometry/kdtree.hpp"
#include "dif/util/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dif::geometry {

namespace {

constexpr double kSurfaceOffset = 1e-7;

std::discrete_distribution<std::size_t> area_distribution(const TriMesh& mesh) {
  std::vector<double> areas(mesh.num_triangles());
  for (std::size_t t = 0; t < areas.size(); ++t) areas[t] = mesh.area(t);
  return {areas.begin(), areas.end()};
}

Vec3 point_in_triangle(const TriMesh& mesh, std::size_t t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double a = u01(rng), b = u01(rng);
  if (a + b > 1) {
    a = 1 - a;
    b = 1 - b;
  }
  const Vec3 p0 = mesh.corner(t, 0);
  return p0 + a * (mesh.corner(t, 1) - p0) + b * (mesh.corner(t, 2) - p0);
}

}  // namespace

std::vector<Vec3> fibonacci_directions(int n) {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    out.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return out;
}

ViewSet::ViewSet(const TriMesh& mesh, int views) : bvh_(mesh), dirs_(fibonacci_directions(views)) {
  double r = 1.0;
  for (const auto& v : mesh.vertices) r = std::max(r, v.norm());
  // Long enough to leave the mesh bounds from any point of [-1,1]^3.
  reach_ = 2.0 * (r + std::sqrt(3.0));
}

int ViewSet::first_view(const Vec3& p) const {
  for (std::size_t v = 0; v < dirs_.size(); ++v)
    if (!bvh_.segment_blocked(p, p + reach_ * dirs_[v], 0.0)) return static_cast<int>(v);
  return -1;
}

int ViewSet::first_view_of_surface(const Vec3& p, const Vec3& n, int* side) const {
  for (std::size_t v = 0; v < dirs_.size(); ++v) {
    const double c = n.dot(dirs_[v]);
    if (std::abs(c) < 1e-9) continue;
    const double s = c > 0 ? 1.0 : -1.0;
    const Vec3 o = p + s * kSurfaceOffset * n;
    if (!bvh_.segment_blocked(o, o + reach_ * dirs_[v], 0.0)) {
      if (side) *side = static_cast<int>(s);
      return static_cast<int>(v);
    }
  }
  return -1;
}

Eigen::Matrix3Xd sample_uniform(const TriMesh& mesh, int count, std::mt19937_64& rng, std::vector<int>* triangles) {
  if (mesh.empty()) throw SamplingError("cannot sample an empty mesh");
  auto pick = area_distribution(mesh);
  Eigen::Matrix3Xd out(3, count);
  if (triangles) triangles->resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::size_t t = pick(rng);
    out.col(i) = point_in_triangle(mesh, t, rng);
    if (triangles) (*triangles)[static_cast<std::size_t>(i)] = static_cast<int>(t);
  }
  return out;
}

ShapeSamples sample_surface(const TriMesh& mesh, int count, std::mt19937_64& rng, int views) {
  mesh.validate();
  if (count <= 0) throw std::invalid_argument("surface sample count must be positive");
  if (mesh.empty()) throw SamplingError("cannot sample an empty mesh");
  const ViewSet view(mesh, views);
  auto pick = area_distribution(mesh);
  const bool labeled = !mesh.labels.empty();

  ShapeSamples out;
  out.surface.resize(3, count);
  out.normals.resize(3, count);
  if (labeled) out.labels.resize(static_cast<std::size_t>(count));
  int filled = 0;
  std::size_t drawn = 0;
  // Candidates are drawn serially and tested in parallel batches.
  const std::size_t batch = std::max<std::size_t>(256, static_cast<std::size_t>(count) / 4);
  std::vector<Vec3> cand(batch);
  std::vector<std::size_t> tri(batch);
  std::vector<int> side(batch);
  while (filled < count) {
    for (std::size_t i = 0; i < batch; ++i) {
      tri[i] = pick(rng);
      cand[i] = point_in_triangle(mesh, tri[i], rng);
    }
    util::parallel_for(batch, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        int s = 0;
        side[i] = view.first_view_of_surface(cand[i], mesh.face_normal(tri[i]), &s) >= 0 ? s : 0;
      }
    });
    for (std::size_t i = 0; i < batch && filled < count; ++i) {
      if (side[i] == 0) continue;
      out.surface.col(filled) = cand[i];
      out.normals.col(filled) = side[i] * mesh.face_normal(tri[i]);
      if (labeled) out.labels[static_cast<std::size_t>(filled)] = mesh.face_label(tri[i]);
      ++filled;
    }
    drawn += batch;
    if (filled == 0 && drawn >= 20 * batch) throw SamplingError("mesh has no externally visible surface");
  }
  return out;
}

Eigen::VectorXd visibility_sdf(const TriMesh& mesh, const Eigen::Matrix3Xd& surface, const Eigen::Matrix3Xd& points, int views) {
  if (surface.cols() == 0) throw std::invalid_argument("free-space distances need surface samples");
  const ViewSet view(mesh, views);
  const NnIndex index(surface);
  Eigen::VectorXd sdf(points.cols());
  util::parallel_for(static_cast<std::size_t>(points.cols()), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const Vec3 p = points.col(static_cast<Eigen::Index>(i));
      const double d = std::sqrt(index.nearest(p).distance2);
      sdf(static_cast<Eigen::Index>(i)) = view.first_view(p) >= 0 ? d : -d;
    }
  });
  return sdf;
}

void sample_free(const TriMesh& mesh, const Eigen::Matrix3Xd& surface, int count, std::mt19937_64& rng, Eigen::Matrix3Xd& points,
                 Eigen::VectorXd& sdf, int views) {
  if (count < 0) throw std::invalid_argument("free sample count must be non-negative");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  points.resize(3, count);
  for (int i = 0; i < count; ++i) points.col(i) = Vec3(u(rng), u(rng), u(rng));
  sdf = visibility_sdf(mesh, surface, points, views);
}

ShapeSamples sample_shape(const TriMesh& mesh, int surface_count, int free_count, std::uint64_t seed, int views) {
  std::mt19937_64 rng(seed);
  ShapeSamples s = sample_surface(mesh, surface_count, rng, views);
  sample_free(mesh, s.surface, free_count, rng, s.free, s.sdf, views);
  return s;
}

}  // namespace dif::geometry
