#include "dif/geometry/bvh.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace dif::geometry {

double ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 h = d.cross(e2);
  const double det = e1.dot(h);
  if (std::abs(det) < 1e-14) return -1.0;
  const double inv = 1.0 / det;
  const Vec3 s = o - a;
  const double u = inv * s.dot(h);
  if (u < 0.0 || u > 1.0) return -1.0;
  const Vec3 q = s.cross(e1);
  const double v = inv * d.dot(q);
  if (v < 0.0 || u + v > 1.0) return -1.0;
  return inv * e2.dot(q);
}

Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

Bvh::Bvh(const TriMesh& mesh) : mesh_(mesh) {
  const int n = static_cast<int>(mesh.triangles.size());
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);
  tri_boxes_.resize(n);
  centroids_.resize(n);
  for (int t = 0; t < n; ++t) {
    Eigen::AlignedBox3d b;
    for (int c = 0; c < 3; ++c) b.extend(mesh.corner(t, c));
    tri_boxes_[t] = b;
    centroids_[t] = b.center();
  }
  nodes_.reserve(2 * n + 1);
  if (n > 0) build(0, n);
}

int Bvh::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box, cbox;
  for (int i = begin; i < end; ++i) {
    box.extend(tri_boxes_[order_[i]]);
    cbox.extend(centroids_[order_[i]]);
  }
  nodes_[id].box = box;
  if (end - begin <= 4) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  int axis = 0;
  cbox.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    return centroids_[a](axis) < centroids_[b](axis) || (centroids_[a](axis) == centroids_[b](axis) && a < b);
  });
  const int l = build(begin, mid);
  const int r = build(mid, end);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

namespace {

bool ray_box(const Vec3& o, const Vec3& inv, const Eigen::AlignedBox3d& b, double tmax) {
  double t0 = 0.0, t1 = tmax;
  for (int a = 0; a < 3; ++a) {
    double tn = (b.min()(a) - o(a)) * inv(a);
    double tf = (b.max()(a) - o(a)) * inv(a);
    if (tn > tf) std::swap(tn, tf);
    if (std::isnan(tn) || std::isnan(tf)) continue;  // ray parallel and on the slab boundary
    t0 = std::max(t0, tn);
    t1 = std::min(t1, tf);
    if (t0 > t1 * (1 + 1e-12) + 1e-12) return false;
  }
  return true;
}

}  // namespace

template <typename Visit>
void Bvh::walk_ray(const Vec3& o, const Vec3& d, double tmax, Visit&& visit) const {
  if (nodes_.empty()) return;
  const Vec3 inv = d.cwiseInverse();
  int stack[128];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (!ray_box(o, inv, node.box, tmax)) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i)
        if (visit(order_[i])) return;
    } else {
      stack[sp++] = node.left;
      stack[sp++] = node.right;
    }
  }
}

bool Bvh::segment_blocked(const Vec3& a, const Vec3& b, double skip) const {
  const Vec3 d = b - a;
  const double len = d.norm();
  if (len <= 2 * skip) return false;
  const double lo = skip / len, hi = 1.0 - skip / len;
  bool hit = false;
  walk_ray(a, d, 1.0, [&](int t) {
    const double s = ray_triangle(a, d, mesh_.corner(t, 0), mesh_.corner(t, 1), mesh_.corner(t, 2));
    if (s > lo && s < hi) hit = true;
    return hit;
  });
  return hit;
}

int Bvh::count_crossings(const Vec3& o, const Vec3& d) const {
  int count = 0;
  walk_ray(o, d, std::numeric_limits<double>::infinity(), [&](int t) {
    if (ray_triangle(o, d, mesh_.corner(t, 0), mesh_.corner(t, 1), mesh_.corner(t, 2)) > 0) ++count;
    return false;
  });
  return count;
}

std::vector<int> Bvh::crossings_per_component(const Vec3& o, const Vec3& d, const std::vector<int>& comp, int ncomp) const {
  std::vector<int> counts(static_cast<std::size_t>(ncomp), 0);
  walk_ray(o, d, std::numeric_limits<double>::infinity(), [&](int t) {
    if (ray_triangle(o, d, mesh_.corner(t, 0), mesh_.corner(t, 1), mesh_.corner(t, 2)) > 0) ++counts[static_cast<std::size_t>(comp[t])];
    return false;
  });
  return counts;
}

ClosestHit Bvh::closest(const Vec3& q) const {
  ClosestHit best;
  best.distance2 = std::numeric_limits<double>::infinity();
  if (nodes_.empty()) return best;
  int stack[128];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (node.box.squaredExteriorDistance(q) > best.distance2) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int t = order_[i];
        const Vec3 p = closest_on_triangle(q, mesh_.corner(t, 0), mesh_.corner(t, 1), mesh_.corner(t, 2));
        const double d2 = (p - q).squaredNorm();
        if (d2 < best.distance2 || (d2 == best.distance2 && t < best.triangle)) best = {d2, p, t};
      }
    } else {
      const double dl = nodes_[node.left].box.squaredExteriorDistance(q);
      const double dr = nodes_[node.right].box.squaredExteriorDistance(q);
      // Push the nearer child last so it is visited first.
      if (dl < dr) {
        stack[sp++] = node.right;
        stack[sp++] = node.left;
      } else {
        stack[sp++] = node.left;
        stack[sp++] = node.right;
      }
    }
  }
  return best;
}

ParityOracle::ParityOracle(const TriMesh& mesh) : bvh_(mesh) { comp_ = triangle_components(mesh, &ncomp_); }

bool ParityOracle::inside(const Vec3& p) const {
  static const Vec3 dirs[3] = {Vec3(0.5773, 0.5812, 0.5735).normalized(), Vec3(-0.3217, 0.8842, -0.3391).normalized(),
                               Vec3(0.1933, -0.4128, 0.8902).normalized()};
  int votes = 0;
  for (const auto& d : dirs) {
    const auto counts = bvh_.crossings_per_component(p, d, comp_, ncomp_);
    const bool in = std::any_of(counts.begin(), counts.end(), [](int k) { return k % 2 == 1; });
    votes += in ? 1 : 0;
  }
  return votes >= 2;
}

}  // namespace dif::geometry
