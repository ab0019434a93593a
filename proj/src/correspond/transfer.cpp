#include "dif/correspond/correspond.hpp"
#include "dif/geometry/kdtree.hpp"
#include "dif/geometry/sampling.hpp"
#include "dif/util/parallel.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace dif::correspond {

Eigen::Matrix3Xd dense_surface(const Model& model, const Code& code, int n, int resolution, std::uint64_t seed) {
  const TriMesh mesh = reconstruct(model, code, resolution);
  if (mesh.triangles.empty()) throw std::runtime_error("reconstruction has no surface at level 0");
  std::mt19937_64 rng(seed);
  return geometry::sample_uniform(mesh, n, rng);
}

std::vector<CorrespondencePair> correspond(const Model& model, const Code& code_a, const Code& code_b,
                                           const Eigen::Matrix3Xd& points_a, const Eigen::Matrix3Xd& surface_b, double gamma) {
  if (surface_b.cols() == 0) throw std::invalid_argument("correspond: target surface is empty");
  const Eigen::Matrix3Xd ta = ShapeField(model, code_a).template_images(points_a);
  const Eigen::Matrix3Xd tb = ShapeField(model, code_b).template_images(surface_b);
  const geometry::NnIndex index(tb);
  std::vector<CorrespondencePair> out(static_cast<std::size_t>(points_a.cols()));
  util::parallel_for(out.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      const auto nb = index.nearest(ta.col(c));
      auto& p = out[i];
      p.p_i = points_a.col(c);
      p.t_i = ta.col(c);
      p.j = nb.index;
      p.p_j = surface_b.col(nb.index);
      p.t_j = tb.col(nb.index);
      p.u = uncertainty(std::sqrt(nb.distance2), gamma);
    }
  });
  return out;
}

std::vector<CorrespondencePair> correspond(const Model& model, const Code& code_a, const Code& code_b,
                                           const Eigen::Matrix3Xd& points_a, double gamma, int resolution, std::uint64_t seed) {
  return correspond(model, code_a, code_b, points_a, dense_surface(model, code_b, kDenseSamples, resolution, seed), gamma);
}

void write_correspondences_csv(const std::vector<CorrespondencePair>& pairs, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(9);
  f << "pi_x,pi_y,pi_z,pj_x,pj_y,pj_z,u\n";
  for (const auto& p : pairs)
    f << p.p_i.x() << ',' << p.p_i.y() << ',' << p.p_i.z() << ',' << p.p_j.x() << ',' << p.p_j.y() << ',' << p.p_j.z() << ','
      << p.u << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<int> transfer_labels(const Model& model, const std::vector<LabeledShape>& sources, const Code& target_code,
                                 const Eigen::Matrix3Xd& target_points, int k, bool object_space) {
  if (sources.empty()) throw std::invalid_argument("transfer_labels: no source shapes");
  if (k < 1) throw std::invalid_argument("transfer_labels: k must be >= 1");
  Eigen::Index total = 0;
  for (const auto& s : sources) {
    if (static_cast<Eigen::Index>(s.labels.size()) != s.points.cols())
      throw std::invalid_argument("transfer_labels: source label count differs from its point count");
    total += s.points.cols();
  }
  Eigen::Matrix3Xd pool(3, total);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(total));
  Eigen::Index off = 0;
  for (const auto& s : sources) {
    pool.middleCols(off, s.points.cols()) = object_space ? s.points : ShapeField(model, s.code).template_images(s.points);
    off += s.points.cols();
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  }
  const Eigen::Matrix3Xd query = object_space ? target_points : ShapeField(model, target_code).template_images(target_points);
  const geometry::NnIndex index(pool);
  std::vector<int> out(static_cast<std::size_t>(query.cols()));
  util::parallel_for(out.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      std::map<int, int> votes;
      for (const auto& nb : index.query(query.col(static_cast<Eigen::Index>(i)), k)) ++votes[labels[static_cast<std::size_t>(nb.index)]];
      int best = -1, best_count = 0;
      for (const auto& [label, count] : votes)
        if (count > best_count) best = label, best_count = count;  // map order: ties keep the lower label
      out[i] = best;
    }
  });
  return out;
}

TransferReport score_labels(std::vector<int> predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("score_labels: length mismatch");
  TransferReport r;
  int max_label = -1;
  for (int l : predicted) max_label = std::max(max_label, l);
  for (int l : truth) max_label = std::max(max_label, l);
  std::vector<double> inter(static_cast<std::size_t>(max_label + 1), 0), uni(inter.size(), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] < 0 || truth[i] < 0) throw std::invalid_argument("score_labels: negative label");
    const auto a = static_cast<std::size_t>(predicted[i]), b = static_cast<std::size_t>(truth[i]);
    if (a == b) {
      inter[a] += 1;
      uni[a] += 1;
    } else {
      uni[a] += 1;
      uni[b] += 1;
    }
  }
  std::vector<double> present;
  r.part_iou.assign(inter.size(), -1.0);
  for (std::size_t l = 0; l < inter.size(); ++l)
    if (uni[l] > 0) present.push_back(r.part_iou[l] = inter[l] / uni[l]);
  if (!present.empty()) {
    double s = 0;
    for (double v : present) s += v;
    r.mean_iou = s / static_cast<double>(present.size());
    std::sort(present.begin(), present.end());
    const std::size_t m = present.size();
    r.median_iou = m % 2 ? present[m / 2] : 0.5 * (present[m / 2 - 1] + present[m / 2]);
  }
  r.predicted = std::move(predicted);
  return r;
}

TextureResult transfer_texture(const Model& model, const TriMesh& source, const Code& source_code, const TriMesh& target,
                               const Code& target_code, double gamma, int dense, std::uint64_t seed) {
  if (source.colors.size() != source.vertices.size())
    throw std::invalid_argument("transfer_texture: source mesh needs one color per vertex");
  if (dense < 0) throw std::invalid_argument("transfer_texture: dense sample count must be >= 0");
  const auto nv = static_cast<Eigen::Index>(source.vertices.size());
  std::vector<int> tris;
  Eigen::Matrix3Xd extra(3, 0);
  if (dense > 0 && !source.triangles.empty()) {
    std::mt19937_64 rng(seed);
    extra = geometry::sample_uniform(source, dense, rng, &tris);
  }
  Eigen::Matrix3Xd pts(3, nv + extra.cols());
  std::vector<Eigen::Vector3f> colors(source.colors);
  for (Eigen::Index i = 0; i < nv; ++i) pts.col(i) = source.vertices[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 0; i < extra.cols(); ++i) {
    const Vec3 p = extra.col(i);
    pts.col(nv + i) = p;
    const auto& t = source.triangles[static_cast<std::size_t>(tris[static_cast<std::size_t>(i)])];
    const Vec3 a = source.vertices[static_cast<std::size_t>(t(0))], b = source.vertices[static_cast<std::size_t>(t(1))],
               c = source.vertices[static_cast<std::size_t>(t(2))];
    // Barycentric weights of p in its triangle.
    const Vec3 v0 = b - a, v1 = c - a, v2 = p - a;
    const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1), d20 = v2.dot(v0), d21 = v2.dot(v1);
    const double den = d00 * d11 - d01 * d01;
    const double wb = den > 0 ? (d11 * d20 - d01 * d21) / den : 1.0 / 3;
    const double wc = den > 0 ? (d00 * d21 - d01 * d20) / den : 1.0 / 3;
    const double wa = 1 - wb - wc;
    colors.push_back((wa * source.colors[static_cast<std::size_t>(t(0))].cast<double>() +
                      wb * source.colors[static_cast<std::size_t>(t(1))].cast<double>() +
                      wc * source.colors[static_cast<std::size_t>(t(2))].cast<double>())
                         .cast<float>()
                         .cwiseMax(0.0f)
                         .cwiseMin(1.0f));
  }
  Eigen::Matrix3Xd tv(3, static_cast<Eigen::Index>(target.vertices.size()));
  for (std::size_t i = 0; i < target.vertices.size(); ++i) tv.col(static_cast<Eigen::Index>(i)) = target.vertices[i];
  const auto pairs = correspond(model, target_code, source_code, tv, pts, gamma);

  TextureResult r;
  r.mesh = target;
  r.mesh.colors.resize(target.vertices.size());
  r.uncertainty.resize(target.vertices.size());
  r.source_index.resize(target.vertices.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    r.source_index[i] = pairs[i].j;
    r.mesh.colors[i] = colors[static_cast<std::size_t>(pairs[i].j)];
    r.uncertainty[i] = pairs[i].u;
  }
  return r;
}

}  // namespace dif::correspond
