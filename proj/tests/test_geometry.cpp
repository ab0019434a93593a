#include "dif/geometry/bvh.hpp"
#include "dif/geometry/io.hpp"
#include "dif/geometry/kdtree.hpp"
#include "dif/geometry/marching_cubes.hpp"
#include "dif/geometry/mesh.hpp"
#include "dif/geometry/metrics.hpp"
#include "dif/geometry/sampling.hpp"
#include "dif/geometry/toys.hpp"
#include "dif/util/parallel.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace dif::geometry;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dif_test_geometry";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kCubeObj =
    "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n"
    "f 1 4 3\nf 1 3 2\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 4 8 7\nf 4 7 3\nf 1 5 8\nf 1 8 4\nf 2 3 7\nf 2 7 6\n";

GridField sphere_grid(int res, double r) {
  GridField g = GridField::cube(res);
  g.fill([&](const Eigen::Matrix3Xd& p) { return Eigen::VectorXd(p.colwise().norm().array() - r); });
  return g;
}

double max_norm(const TriMesh& m) {
  double r = 0;
  for (const auto& v : m.vertices) r = std::max(r, v.norm());
  return r;
}

}  // namespace

TEST_CASE("obj: unit cube counts, round trip and 1-based indices") {
  const auto path = scratch("cube.obj");
  write_text(path, kCubeObj);
  const TriMesh m = load_mesh(path);
  CHECK(m.num_vertices() == 8);
  CHECK(m.num_triangles() == 12);
  CHECK(is_closed(m));
  CHECK(m.signed_volume() == doctest::Approx(1.0));

  TriMesh q = icosphere(0.7, 2, Vec3(0.1, -0.2, 0.3));
  q.labels.assign(q.num_vertices(), 2);
  save_mesh(q, scratch("rt.obj"));
  const TriMesh back = load_mesh(scratch("rt.obj"));
  REQUIRE(back.num_vertices() == q.num_vertices());
  REQUIRE(back.triangles == q.triangles);
  for (std::size_t i = 0; i < q.num_vertices(); ++i) CHECK((back.vertices[i] - q.vertices[i]).norm() < 1e-6);

  write_text(scratch("zero.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n");
  try {
    load_mesh(scratch("zero.obj"));
    FAIL("index 0 accepted");
  } catch (const MeshFormatError& e) {
    CHECK(e.line() == 4);
  }
  write_text(scratch("junk.obj"), "v 0 0 0\nv 1 zz 0\n");
  CHECK_THROWS_AS(load_mesh(scratch("junk.obj")), MeshFormatError);
}

TEST_CASE("normalize: target radius, centroid, idempotence") {
  TriMesh unit = icosphere(1.0, 3);
  const auto before = unit.vertices;
  const Similarity s = normalize_mesh(unit);
  CHECK(s.scale == doctest::Approx(1.0 / 1.03).epsilon(1e-9));
  for (std::size_t i = 0; i < before.size(); ++i) CHECK((unit.vertices[i] - before[i] / 1.03).norm() < 1e-9);
  CHECK(max_norm(unit) == doctest::Approx(0.970873786).epsilon(1e-8));

  TriMesh odd = box_mesh(Vec3(3, -1, 2), Vec3(0.5, 2.0, 0.1));
  odd.append(icosphere(0.4, 1, Vec3(4, 0, 2)));
  normalize_mesh(odd);
  CHECK(std::abs(max_norm(odd) - kNormalizedRadius) < 1e-6);
  CHECK(surface_centroid(odd).norm() < 1e-9);
  const auto once = odd.vertices;
  normalize_mesh(odd);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK((odd.vertices[i] - once[i]).norm() < 1e-9);
}

TEST_CASE("icosphere and box meshes are closed and outward") {
  const TriMesh s = icosphere(0.5, 3);
  CHECK(is_closed(s));
  CHECK(s.signed_volume() > 0);
  for (const auto& v : s.vertices) CHECK(v.norm() == doctest::Approx(0.5));
  const TriMesh b = box_mesh(Vec3(1, 2, 3), Vec3(0.5, 1, 2));
  CHECK(is_closed(b));
  CHECK(b.signed_volume() == doctest::Approx(8.0));
}

TEST_CASE("kd-tree equals brute force") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::Matrix3Xd pts(3, 1000);
  for (int i = 0; i < pts.cols(); ++i) pts.col(i) = Vec3(u(rng), u(rng), u(rng));
  // Duplicates exercise the index tie-break.
  pts.col(17) = pts.col(900);
  const NnIndex index(pts);
  for (int q = 0; q < 100; ++q) {
    const Vec3 p = q == 0 ? Vec3(pts.col(900)) : Vec3(u(rng), u(rng), u(rng));
    for (int k : {1, 10}) {
      const auto a = index.query(p, k);
      const auto b = brute_force_knn(pts, p, k);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].index == b[i].index);
        CHECK(a[i].distance2 == b[i].distance2);
      }
    }
  }
  const auto self = index.query(pts.col(5), 3);
  CHECK(self.front().index == 5);
  CHECK(self.front().distance2 == 0.0);
  CHECK(index.query(pts.col(900), 1).front().index == 17);

  const NnIndex small(pts.leftCols(7));
  const auto all = small.query(Vec3::Zero(), 50);
  REQUIRE(all.size() == 7);
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].distance2 <= all[i].distance2);
  CHECK(NnIndex(Eigen::Matrix3Xd(3, 0)).query(Vec3::Zero(), 3).empty());
}

TEST_CASE("bvh closest point and crossings against brute force") {
  const TriMesh m = icosphere(0.5, 2);
  const Bvh bvh(m);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int q = 0; q < 50; ++q) {
    const Vec3 p(u(rng), u(rng), u(rng));
    double best = 1e300;
    for (std::size_t t = 0; t < m.num_triangles(); ++t)
      best = std::min(best, (closest_on_triangle(p, m.corner(t, 0), m.corner(t, 1), m.corner(t, 2)) - p).squaredNorm());
    CHECK(bvh.closest(p).distance2 == doctest::Approx(best).epsilon(1e-12));
    const Vec3 d = Vec3(u(rng), u(rng), u(rng)).normalized();
    int hits = 0;
    for (std::size_t t = 0; t < m.num_triangles(); ++t)
      if (ray_triangle(p, d, m.corner(t, 0), m.corner(t, 1), m.corner(t, 2)) > 0) ++hits;
    CHECK(bvh.count_crossings(p, d) == hits);
  }
  const ParityOracle parity(m);
  CHECK(parity.inside(Vec3(0.1, 0.2, -0.1)));
  CHECK_FALSE(parity.inside(Vec3(0.6, 0.0, 0.0)));
}

TEST_CASE("marching cubes on an analytic sphere") {
  const GridField g = sphere_grid(32, 0.5);
  const TriMesh m = marching_cubes(g);
  REQUIRE(!m.empty());
  const double h = 2.0 / 32;
  double worst_residual = 0;
  for (const auto& v : m.vertices) {
    CHECK(std::abs(v.norm() - 0.5) < 2 * h);
    worst_residual = std::max(worst_residual, std::abs(g.interpolate(v)));
  }
  CHECK(worst_residual < 1e-6);
  CHECK(is_closed(m));
  CHECK(m.signed_volume() > 0);
  CHECK(m.signed_volume() == doctest::Approx(4.0 / 3.0 * M_PI * 0.125).epsilon(0.05));
  int ncomp = 0;
  triangle_components(m, &ncomp);
  CHECK(ncomp == 1);

  // Level shifts move the surface.
  const TriMesh inner = marching_cubes(g, -0.1);
  for (const auto& v : inner.vertices) CHECK(std::abs(v.norm() - 0.4) < 2 * h);

  GridField pos = GridField::cube(8);
  std::fill(pos.values.begin(), pos.values.end(), 1.0);
  CHECK(marching_cubes(pos).empty());
  CHECK(marching_cubes(g, 10.0).empty());
  pos.values[3] = std::nan("");
  CHECK_THROWS_AS(marching_cubes(pos), std::invalid_argument);
  pos.values.pop_back();
  CHECK_THROWS_AS(marching_cubes(pos), std::invalid_argument);
}

TEST_CASE("marching cubes vertices interpolate random fields exactly") {
  GridField g;
  g.res = {5, 6, 7};
  g.lo = Vec3(-1, -0.5, 0);
  g.hi = Vec3(1, 0.5, 2);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (std::size_t i = 0; i < g.size(); ++i) g.values.push_back(n(rng));
  const TriMesh m = marching_cubes(g, 0.2);
  REQUIRE(!m.empty());
  for (const auto& v : m.vertices) CHECK(std::abs(g.interpolate(v) - 0.2) < 1e-6);
  m.validate();
}

TEST_CASE("surface samples on a sphere") {
  const TriMesh s = icosphere(0.5, 5);
  std::mt19937_64 rng(4);
  const ShapeSamples out = sample_surface(s, 3000, rng);
  REQUIRE(out.surface.cols() == 3000);
  CHECK(out.labels.empty());
  for (int i = 0; i < out.surface.cols(); ++i) {
    const Vec3 p = out.surface.col(i);
    CHECK(std::abs(p.norm() - 0.5) < 1e-3);
    CHECK(out.normals.col(i).dot(p.normalized()) > 0.999);
  }
}

TEST_CASE("surface samples skip enclosed geometry and fail on hidden surfaces") {
  TriMesh m = box_mesh(Vec3::Zero(), Vec3::Constant(0.6), 0);
  m.append(box_mesh(Vec3::Zero(), Vec3::Constant(0.2), 1));
  std::mt19937_64 rng(5);
  const ShapeSamples out = sample_surface(m, 2000, rng);
  for (int i = 0; i < out.surface.cols(); ++i) {
    CHECK(out.labels[static_cast<std::size_t>(i)] == 0);
    CHECK(out.surface.col(i).cwiseAbs().maxCoeff() == doctest::Approx(0.6));
  }
  // Everything inside a closed shell is hidden from every view.
  TriMesh enclosed = box_mesh(Vec3::Zero(), Vec3::Constant(0.2));
  enclosed.append(box_mesh(Vec3::Zero(), Vec3::Constant(0.6)));
  const ViewSet views(enclosed);
  CHECK(views.first_view(Vec3(0.4, 0.0, 0.0)) == -1);
  CHECK(views.first_view(Vec3(0.7, 0.0, 0.0)) >= 0);
  CHECK(views.first_view_of_surface(Vec3(0.2, 0.0, 0.0), Vec3(1, 0, 0), nullptr) == -1);
  // An open sheet is seen from both sides.
  TriMesh sheet;
  sheet.vertices = {Vec3(-0.5, -0.5, 0), Vec3(0.5, -0.5, 0), Vec3(0, 0.5, 0)};
  sheet.triangles = {Tri(0, 1, 2)};
  const ShapeSamples both = sample_surface(sheet, 400, rng);
  int up = 0;
  for (int i = 0; i < both.normals.cols(); ++i) up += both.normals(2, i) > 0;
  CHECK(up == 400);
  TriMesh empty;
  CHECK_THROWS_AS(sample_surface(empty, 10, rng), SamplingError);
}

TEST_CASE("toy table samples follow visible part areas") {
  const ToyShape toy = toy_family(ToySpec::defaults(ToyFamily::kTable));
  std::mt19937_64 rng(6);
  const ShapeSamples out = sample_surface(toy.mesh, 20000, rng);
  std::array<double, kPartCount> counts{};
  for (int l : out.labels) counts[static_cast<std::size_t>(l)] += 1;

  // Visible areas from the box dimensions: the top loses its four leg
  // footprints; each leg loses the length buried in the top.
  const ToySpec& s = toy.spec;
  const double k = toy.normalization.scale;
  const double W = s.top_width, D = s.top_depth, t = s.top_thickness, l = s.leg_size;
  const double top = 2 * (W * D + W * t + D * t) - 4 * l * l;
  const double legs = 4 * (4 * l * (s.height - t) + l * l);
  const double total = top + legs;
  CHECK(counts[kTop] / 20000.0 == doctest::Approx(top / total).epsilon(0.1));
  CHECK(counts[kLeg] / 20000.0 == doctest::Approx(legs / total).epsilon(0.1));
  CHECK(counts[kStretcher] == 0);
  CHECK(k > 0);
}

TEST_CASE("free samples on a sphere") {
  const TriMesh s = icosphere(0.5, 5);
  std::mt19937_64 rng(7);
  const ShapeSamples surf = sample_surface(s, 20000, rng);
  Eigen::Matrix3Xd q(3, 2);
  q.col(0) = Vec3::Zero();
  q.col(1) = Vec3::Constant(0.9);
  const Eigen::VectorXd sdf = visibility_sdf(s, surf.surface, q);
  CHECK(sdf(0) == doctest::Approx(-0.5).epsilon(0.04));
  CHECK(std::abs(sdf(0) + 0.5) < 2e-2);
  CHECK(sdf(1) > 0);
  CHECK(std::abs(sdf(1) - (Vec3::Constant(0.9).norm() - 0.5)) < 2e-2);

  Eigen::Matrix3Xd pts;
  Eigen::VectorXd vals;
  sample_free(s, surf.surface, 2000, rng, pts, vals);
  CHECK(pts.cwiseAbs().maxCoeff() <= 1.0);
  for (int i = 0; i < pts.cols(); ++i) {
    const double exact = pts.col(i).norm() - 0.5;
    CHECK(std::abs(vals(i) - exact) < 2e-2);
  }
}

TEST_CASE("free-space signs agree with ray parity on toys") {
  for (const auto& spec : {ToySpec::random(ToyFamily::kTable, 1, true), ToySpec::random(ToyFamily::kTable, 2, false),
                           ToySpec::random(ToyFamily::kChair, 3, true)}) {
    const ToyShape toy = toy_family(spec);
    const ShapeSamples s = sample_shape(toy.mesh, 5000, 4000, 11);
    const ParityOracle parity(toy.mesh);
    int agree = 0;
    for (int i = 0; i < s.free.cols(); ++i) agree += (s.sdf(i) < 0) == parity.inside(s.free.col(i));
    CHECK(agree >= 0.995 * s.free.cols());
    // The analytic box union agrees too, away from the surface.
    for (int i = 0; i < s.free.cols(); ++i) {
      const double exact = toy.sdf(s.free.col(i));
      if (std::abs(exact) > 0.02) CHECK((exact < 0) == parity.inside(s.free.col(i)));
    }
  }
}

TEST_CASE("sampling is reproducible and independent of thread count") {
  const ToyShape toy = toy_family(ToySpec::random(ToyFamily::kTable, 4, true));
  const int saved = dif::util::threads();
  dif::util::set_threads(1);
  const ShapeSamples a = sample_shape(toy.mesh, 500, 500, 3);
  dif::util::set_threads(3);
  const ShapeSamples b = sample_shape(toy.mesh, 500, 500, 3);
  dif::util::set_threads(saved);
  CHECK(a.surface == b.surface);
  CHECK(a.normals == b.normals);
  CHECK(a.labels == b.labels);
  CHECK(a.sdf == b.sdf);
}

TEST_CASE("chamfer and f-score") {
  const TriMesh a = icosphere(0.5, 4);
  CHECK(chamfer(a, a, 4000) < 1e-12);
  CHECK(fscore(a, a, 1e-3, 4000) == 1.0);
  const double eps = 0.01;
  const TriMesh b = icosphere(0.5 + eps, 4);
  CHECK(chamfer(a, b, 10000) == doctest::Approx(eps * eps).epsilon(0.2));
  CHECK(fscore(a, b, eps / 2, 4000) == 0.0);
  CHECK(fscore(a, b, 2 * eps, 4000) == 1.0);

  // One-sided coverage: half the points of B are far from A.
  TriMesh two = a;
  two.append(icosphere(0.5, 4, Vec3(3, 0, 0)));
  const double f = fscore(a, two, 1e-3, 8000);
  CHECK(f == doctest::Approx(2 * 0.5 / 1.5).epsilon(0.05));
}

TEST_CASE("toy family contract") {
  const ToyShape table = toy_family(ToySpec::defaults(ToyFamily::kTable));
  CHECK(table.count_label(kLeg) == 4);
  CHECK(table.count_label(kStretcher) == 0);
  CHECK(table.keypoints.size() == 12);
  std::set<std::string> names;
  for (const auto& k : table.keypoints) names.insert(k.name);
  CHECK(names.size() == 12);
  CHECK(names.count("top_left_back_upper") == 1);
  CHECK(names.count("foot_right_front") == 1);
  CHECK(is_closed(table.mesh));
  CHECK(std::abs(max_norm(table.mesh) - kNormalizedRadius) < 1e-6);

  const ToyShape with = toy_family(ToySpec::random(ToyFamily::kTable, 8, true));
  std::set<int> labels(with.mesh.labels.begin(), with.mesh.labels.end());
  CHECK(labels.count(kStretcher) == 1);
  CHECK(std::string(part_name(kStretcher)) == "stretcher");

  const ToyShape chair = toy_family(ToySpec::random(ToyFamily::kChair, 8));
  CHECK(chair.count_label(kBack) == 1);
  CHECK(chair.keypoints.size() == 12);

  for (const ToyShape* toy : {&table, &with, &chair}) {
    for (const auto& k : toy->keypoints) CHECK(std::abs(toy->sdf(k.position)) < 1e-6);
    // Box SDF matches the brute-force distance to the mesh outside the shape.
    const Bvh bvh(toy->mesh);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 200; ++i) {
      const Vec3 p(u(rng), u(rng), u(rng));
      const double s = toy->sdf(p);
      if (s > 0) CHECK(s == doctest::Approx(std::sqrt(bvh.closest(p).distance2)).epsilon(1e-9));
    }
  }
  CHECK(toy_family(ToySpec::random(ToyFamily::kTable, 5)).mesh.vertices == toy_family(ToySpec::random(ToyFamily::kTable, 5)).mesh.vertices);

  ToySpec bad = ToySpec::defaults(ToyFamily::kTable);
  bad.leg_size = 0.5;
  CHECK_THROWS_AS(toy_family(bad), std::invalid_argument);
  CHECK_THROWS_AS(parse_family("sofa"), std::invalid_argument);
}

TEST_CASE("sample cache, labels and keypoints files") {
  const ToyShape toy = toy_family(ToySpec::random(ToyFamily::kTable, 9, true));
  const ShapeSamples s = sample_shape(toy.mesh, 300, 200, 1);
  save_samples(s, scratch("a.difs"));
  const ShapeSamples r = load_samples(scratch("a.difs"));
  CHECK(r.surface.cols() == 300);
  CHECK(r.free.cols() == 200);
  CHECK((r.surface - s.surface).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((r.normals - s.normals).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((r.sdf - s.sdf).cwiseAbs().maxCoeff() < 1e-6);

  std::ifstream in(scratch("a.difs"), std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "DIFS");
  CHECK(fs::file_size(scratch("a.difs")) == 16 + 4 * (6 * 300 + 4 * 200));

  write_text(scratch("bad.difs"), "NOPE0000000000000000");
  CHECK_THROWS_AS(load_samples(scratch("bad.difs")), FileFormatError);
  fs::copy_file(scratch("a.difs"), scratch("short.difs"), fs::copy_options::overwrite_existing);
  fs::resize_file(scratch("short.difs"), 100);
  CHECK_THROWS_AS(load_samples(scratch("short.difs")), FileFormatError);
  CHECK_THROWS(load_samples(scratch("missing.difs")));

  save_labels(s.labels, scratch("a.labels"));
  CHECK(load_labels(scratch("a.labels")) == s.labels);
  write_text(scratch("bad.labels"), "1\n2 3\n");
  CHECK_THROWS_AS(load_labels(scratch("bad.labels")), FileFormatError);

  save_keypoints(toy.keypoints, scratch("a.keypoints"));
  const auto keys = load_keypoints(scratch("a.keypoints"));
  REQUIRE(keys.size() == toy.keypoints.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    CHECK(keys[i].name == toy.keypoints[i].name);
    CHECK((keys[i].position - toy.keypoints[i].position).norm() < 1e-6);
  }
}

TEST_CASE("parallel_for covers the range once") {
  const int saved = dif::util::threads();
  for (int t : {1, 2, 5}) {
    dif::util::set_threads(t);
    std::vector<int> hit(37, 0);
    dif::util::parallel_for(hit.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) ++hit[i];
    });
    CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
  }
  dif::util::set_threads(2);
  CHECK_THROWS_AS(dif::util::parallel_for(4, [](std::size_t, std::size_t) { throw std::runtime_error("x"); }), std::runtime_error);
  dif::util::set_threads(saved);
}
