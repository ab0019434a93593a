#include "dif/correspond/correspond.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace dif::correspond {

Code latent_interp(const Code& a, const Code& b, double t) {
  if (a.size() != b.size()) throw nets::DimensionMismatch("latent_interp: code lengths differ");
  if (!std::isfinite(t)) throw std::invalid_argument("latent_interp: t must be finite");
  return ((1.0 - t) * a.cast<double>() + t * b.cast<double>()).cast<float>();
}

std::vector<Retrieved> latent_retrieve(const training::Checkpoint& ckpt, const Code& code, int k) {
  if (k < 1) throw std::invalid_argument("latent_retrieve: k must be >= 1");
  if (code.size() != ckpt.model.config.latent_dim) throw nets::DimensionMismatch("latent_retrieve: code length differs from latent_dim");
  std::vector<Retrieved> all;
  for (std::size_t i = 0; i < ckpt.codes.size(); ++i) {
    Retrieved r;
    r.index = static_cast<int>(i);
    r.id = i < ckpt.shape_ids.size() ? ckpt.shape_ids[i] : std::to_string(i);
    r.distance = (ckpt.codes[i] - code).cast<double>().norm();
    all.push_back(r);
  }
  std::stable_sort(all.begin(), all.end(), [](const Retrieved& a, const Retrieved& b) { return a.distance < b.distance; });
  all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(k)));
  return all;
}

Code latent_sample(const training::Checkpoint& ckpt, std::mt19937_64& rng) {
  if (!ckpt.variational()) throw std::invalid_argument("latent_sample: checkpoint was not trained with the variational regularizer");
  std::normal_distribution<double> n(0.0, ckpt.config.weights.prior_std);
  Code c(ckpt.model.config.latent_dim);
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = static_cast<float>(n(rng));
  return c;
}

SliceGrid template_slice(const Model& model, int axis, double offset, int resolution) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("template_slice: axis must be 0, 1 or 2");
  if (resolution < 2) throw std::invalid_argument("template_slice: resolution must be >= 2");
  const int u = axis == 0 ? 1 : 0, v = axis == 2 ? 1 : 2;
  Eigen::Matrix3Xf pts(3, resolution * resolution);
  for (int r = 0; r < resolution; ++r)
    for (int c = 0; c < resolution; ++c) {
      Eigen::Vector3f p;
      p(axis) = static_cast<float>(offset);
      p(u) = static_cast<float>(-1.0 + 2.0 * c / (resolution - 1));
      p(v) = static_cast<float>(-1.0 + 2.0 * r / (resolution - 1));
      pts.col(r * resolution + c) = p;
    }
  const auto vals = nets::evaluate_template<float>(model.templ, pts);
  SliceGrid s;
  s.axis = axis;
  s.offset = offset;
  s.resolution = resolution;
  s.values.resize(resolution, resolution);
  for (int r = 0; r < resolution; ++r)
    for (int c = 0; c < resolution; ++c) s.values(r, c) = vals(r * resolution + c);
  return s;
}

void write_slice_csv(const SliceGrid& s, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(9);
  for (Eigen::Index r = 0; r < s.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.values.cols(); ++c) f << (c ? "," : "") << s.values(r, c);
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void write_slice_pgm(const SliceGrid& s, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const double m = std::max(s.values.cwiseAbs().maxCoeff(), 1e-12);
  f << "P5\n" << s.values.cols() << ' ' << s.values.rows() << "\n255\n";
  // Top image row = largest coordinate on the vertical axis.
  for (Eigen::Index r = s.values.rows() - 1; r >= 0; --r)
    for (Eigen::Index c = 0; c < s.values.cols(); ++c) {
      const double g = std::clamp(128.0 + 127.0 * s.values(r, c) / m, 0.0, 255.0);
      f.put(static_cast<char>(static_cast<unsigned char>(std::lround(g))));
    }
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<TriMesh> template_isosurfaces(const Model& model, const std::vector<double>& levels, int resolution) {
  auto grid = geometry::GridField::cube(resolution);
  grid.fill([&](const Eigen::Matrix3Xd& p) { return nets::evaluate_template<float>(model.templ, p.cast<float>()).cast<double>().eval(); });
  std::vector<TriMesh> out;
  for (double l : levels) out.push_back(geometry::marching_cubes(grid, l));
  return out;
}

}  // namespace dif::correspond
