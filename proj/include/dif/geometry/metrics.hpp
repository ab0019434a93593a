#pragma once

#include "dif/geometry/mesh.hpp"

#include <cstdint>

namespace dif::geometry {

struct SurfaceDistance {
  double chamfer = 0;  // mean of the two directed mean squared distances
  double precision = 0, recall = 0, fscore = 0;
};

/// Distances between point samples of two surfaces: a_points lie on mesh A and
/// b_points on mesh B. Each point is measured against the other mesh.
SurfaceDistance compare_surfaces(const Eigen::Matrix3Xd& a_points, const TriMesh& a, const Eigen::Matrix3Xd& b_points,
                                 const TriMesh& b, double tau);

/// Symmetric mean squared point-to-mesh distance over n uniform samples per mesh.
double chamfer(const TriMesh& a, const TriMesh& b, int n = 10000, std::uint64_t seed = 0);
/// Harmonic mean of precision and recall at distance tau.
double fscore(const TriMesh& a, const TriMesh& b, double tau, int n = 10000, std::uint64_t seed = 0);

}  // namespace dif::geometry
