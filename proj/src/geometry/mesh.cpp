#include "dif/geometry/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace dif::geometry {

double TriMesh::area(std::size_t t) const {
  return 0.5 * (corner(t, 1) - corner(t, 0)).cross(corner(t, 2) - corner(t, 0)).norm();
}

Vec3 TriMesh::face_normal(std::size_t t) const {
  const Vec3 n = (corner(t, 1) - corner(t, 0)).cross(corner(t, 2) - corner(t, 0));
  const double len = n.norm();
  return len > 0 ? Vec3(n / len) : Vec3::Zero();
}

double TriMesh::surface_area() const {
  double a = 0;
  for (std::size_t t = 0; t < triangles.size(); ++t) a += area(t);
  return a;
}

double TriMesh::signed_volume() const {
  double v = 0;
  for (std::size_t t = 0; t < triangles.size(); ++t) v += corner(t, 0).dot(corner(t, 1).cross(corner(t, 2)));
  return v / 6.0;
}

void TriMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (std::size_t t = 0; t < triangles.size(); ++t)
    for (int c = 0; c < 3; ++c)
      if (triangles[t](c) < 0 || triangles[t](c) >= n)
        throw std::invalid_argument("triangle " + std::to_string(t) + " has index " + std::to_string(triangles[t](c)) +
                                    " outside [0, " + std::to_string(n) + ")");
  if (!colors.empty() && colors.size() != vertices.size()) throw std::invalid_argument("color count differs from vertex count");
  if (!labels.empty() && labels.size() != vertices.size()) throw std::invalid_argument("label count differs from vertex count");
}

void TriMesh::append(const TriMesh& other) {
  const int off = static_cast<int>(vertices.size());
  const bool had_colors = !colors.empty() || vertices.empty();
  const bool had_labels = !labels.empty() || vertices.empty();
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (const auto& t : other.triangles) triangles.push_back(t.array() + off);
  if (had_colors && !other.colors.empty())
    colors.insert(colors.end(), other.colors.begin(), other.colors.end());
  else
    colors.clear();
  if (had_labels && !other.labels.empty())
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  else
    labels.clear();
}

namespace {

int parse_index(const std::string& tok, int nverts, const std::string& path, int line) {
  const std::string head = tok.substr(0, tok.find('/'));
  int idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoi(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    throw MeshFormatError(path, line, "bad face index '" + tok + "'");
  }
  if (idx == 0) throw MeshFormatError(path, line, "face index 0 (OBJ indices are 1-based)");
  const int zero_based = idx > 0 ? idx - 1 : nverts + idx;
  if (zero_based < 0 || zero_based >= nverts)
    throw MeshFormatError(path, line, "face index " + std::to_string(idx) + " out of range (" + std::to_string(nverts) + " vertices)");
  return zero_based;
}

}  // namespace

TriMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh file " + path.string());
  TriMesh m;
  bool any_color = false, all_color = true;
  std::string line;
  int lineno = 0;
  const std::string p = path.string();
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      std::vector<double> xs;
      double x;
      while (ss >> x) xs.push_back(x);
      if (!ss.eof() || (xs.size() != 3 && xs.size() != 4 && xs.size() != 6))
        throw MeshFormatError(p, lineno, "malformed vertex record");
      m.vertices.emplace_back(xs[0], xs[1], xs[2]);
      if (xs.size() == 6) {
        any_color = true;
        m.colors.emplace_back(static_cast<float>(xs[3]), static_cast<float>(xs[4]), static_cast<float>(xs[5]));
      } else {
        all_color = false;
        m.colors.emplace_back(0.f, 0.f, 0.f);
      }
    } else if (tag == "vn" || tag == "vt") {
      double x;
      int n = 0;
      while (ss >> x) ++n;
      if (!ss.eof() || n < 2) throw MeshFormatError(p, lineno, "malformed " + tag + " record");
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) idx.push_back(parse_index(tok, static_cast<int>(m.vertices.size()), p, lineno));
      if (idx.size() < 3) throw MeshFormatError(p, lineno, "face with fewer than 3 vertices");
      for (std::size_t i = 1; i + 1 < idx.size(); ++i) m.triangles.emplace_back(idx[0], idx[i], idx[i + 1]);
    } else if (tag == "o" || tag == "g" || tag == "s" || tag == "usemtl" || tag == "mtllib" || tag == "l") {
      continue;
    } else {
      throw MeshFormatError(p, lineno, "unknown record '" + tag + "'");
    }
  }
  if (!any_color || !all_color) m.colors.clear();
  remove_degenerate(m);
  return m;
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  mesh.validate();
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw std::runtime_error("cannot write mesh file " + path.string());
  const bool color = !mesh.colors.empty();
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    if (color)
      std::fprintf(f, "v %.9g %.9g %.9g %.6g %.6g %.6g\n", v.x(), v.y(), v.z(), mesh.colors[i].x(), mesh.colors[i].y(),
                   mesh.colors[i].z());
    else
      std::fprintf(f, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
  }
  for (const auto& t : mesh.triangles) std::fprintf(f, "f %d %d %d\n", t(0) + 1, t(1) + 1, t(2) + 1);
  const bool ok = std::ferror(f) == 0;
  std::fclose(f);
  if (!ok) throw std::runtime_error("error while writing " + path.string());
}

std::size_t remove_degenerate(TriMesh& mesh) {
  const std::size_t before = mesh.triangles.size();
  std::vector<Tri> keep;
  keep.reserve(before);
  for (std::size_t t = 0; t < before; ++t) {
    const Tri& tri = mesh.triangles[t];
    if (tri(0) == tri(1) || tri(1) == tri(2) || tri(0) == tri(2)) continue;
    if (mesh.area(t) <= 0.0) continue;
    keep.push_back(tri);
  }
  mesh.triangles = std::move(keep);
  return before - mesh.triangles.size();
}

Vec3 surface_centroid(const TriMesh& mesh) {
  Vec3 c = Vec3::Zero();
  double total = 0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const double a = mesh.area(t);
    c += a * (mesh.corner(t, 0) + mesh.corner(t, 1) + mesh.corner(t, 2)) / 3.0;
    total += a;
  }
  if (total <= 0) throw std::invalid_argument("centroid of a mesh with zero area");
  return c / total;
}

Similarity normalize_mesh(TriMesh& mesh) {
  Similarity s;
  s.center = surface_centroid(mesh);
  double r = 0;
  for (const auto& v : mesh.vertices) r = std::max(r, (v - s.center).norm());
  if (r <= 0) throw std::invalid_argument("cannot normalize a mesh of zero extent");
  s.scale = kNormalizedRadius / r;
  for (auto& v : mesh.vertices) v = s.apply(v);
  return s;
}

bool is_closed(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> count;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      int a = t(e), b = t((e + 1) % 3);
      if (a > b) std::swap(a, b);
      ++count[{a, b}];
    }
  return !count.empty() && std::all_of(count.begin(), count.end(), [](const auto& kv) { return kv.second == 2; });
}

std::vector<int> triangle_components(const TriMesh& mesh, int* count) {
  std::vector<int> parent(mesh.vertices.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& t : mesh.triangles) {
    parent[find(t(1))] = find(t(0));
    parent[find(t(2))] = find(t(0));
  }
  std::map<int, int> ids;
  std::vector<int> comp(mesh.triangles.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const int root = find(mesh.triangles[t](0));
    auto it = ids.try_emplace(root, static_cast<int>(ids.size())).first;
    comp[t] = it->second;
  }
  if (count) *count = static_cast<int>(ids.size());
  return comp;
}

TriMesh icosphere(double radius, int subdivisions, const Vec3& center) {
  if (radius <= 0 || subdivisions < 0) throw std::invalid_argument("icosphere needs radius > 0 and subdivisions >= 0");
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
                         {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Tri> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                        {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                        {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto [it, fresh] = mid.try_emplace(key, static_cast<int>(v.size()));
      if (fresh) v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      return it->second;
    };
    std::vector<Tri> next;
    next.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int a = midpoint(t(0), t(1)), b = midpoint(t(1), t(2)), c = midpoint(t(2), t(0));
      next.emplace_back(t(0), a, c);
      next.emplace_back(t(1), b, a);
      next.emplace_back(t(2), c, b);
      next.emplace_back(a, b, c);
    }
    f = std::move(next);
  }
  TriMesh m;
  m.vertices.reserve(v.size());
  for (const auto& p : v) m.vertices.push_back(center + radius * p);
  m.triangles = std::move(f);
  return m;
}

}  // namespace dif::geometry
