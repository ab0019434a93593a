#include "dif/geometry/metrics.hpp"

#include "dif/geometry/bvh.hpp"
#include "dif/geometry/sampling.hpp"
#include "dif/util/parallel.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace dif::geometry {

namespace {

struct Directed {
  double mean_sq = 0;
  double within = 0;
};

Directed directed(const Eigen::Matrix3Xd& pts, const TriMesh& target, double tau) {
  if (pts.cols() == 0) throw std::invalid_argument("no points to compare");
  if (target.empty()) throw std::invalid_argument("cannot measure distance to an empty mesh");
  const Bvh bvh(target);
  std::vector<double> d2(static_cast<std::size_t>(pts.cols()));
  util::parallel_for(d2.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) d2[i] = bvh.closest(pts.col(static_cast<Eigen::Index>(i))).distance2;
  });
  Directed out;
  for (double v : d2) {
    out.mean_sq += v;
    if (std::sqrt(v) <= tau) out.within += 1;
  }
  out.mean_sq /= static_cast<double>(d2.size());
  out.within /= static_cast<double>(d2.size());
  return out;
}

}  // namespace

SurfaceDistance compare_surfaces(const Eigen::Matrix3Xd& a_points, const TriMesh& a, const Eigen::Matrix3Xd& b_points,
                                 const TriMesh& b, double tau) {
  const Directed ab = directed(a_points, b, tau);
  const Directed ba = directed(b_points, a, tau);
  SurfaceDistance out;
  out.chamfer = 0.5 * (ab.mean_sq + ba.mean_sq);
  out.precision = ab.within;
  out.recall = ba.within;
  out.fscore = out.precision + out.recall > 0 ? 2 * out.precision * out.recall / (out.precision + out.recall) : 0.0;
  return out;
}

double chamfer(const TriMesh& a, const TriMesh& b, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto pa = sample_uniform(a, n, rng);
  const auto pb = sample_uniform(b, n, rng);
  return compare_surfaces(pa, a, pb, b, 0.0).chamfer;
}

double fscore(const TriMesh& a, const TriMesh& b, double tau, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto pa = sample_uniform(a, n, rng);
  const auto pb = sample_uniform(b, n, rng);
  return compare_surfaces(pa, a, pb, b, tau).fscore;
}

}  // namespace dif::geometry
