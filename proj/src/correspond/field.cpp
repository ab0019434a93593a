#include "dif/correspond/correspond.hpp"
#include "dif/diffkit/adam.hpp"

#include <cmath>

namespace dif::correspond {

ShapeField::ShapeField(const Model& model, const Code& code)
    : model_(model), code_(code), deform_([&] {
        if (code.size() != model.config.latent_dim)
          throw nets::DimensionMismatch("code has " + std::to_string(code.size()) + " entries, model expects " +
                                        std::to_string(model.config.latent_dim));
        if (!code.allFinite()) throw std::invalid_argument("code contains non-finite values");
        return nets::deform_net(model, code);
      }()) {}

Eigen::VectorXd ShapeField::values(const Eigen::Matrix3Xd& points) const {
  const auto b = nets::evaluate_field<float>(model_.templ, deform_, points.cast<float>(), model_.config.use_correction, false);
  return b.s.cast<double>();
}

Eigen::VectorXd ShapeField::values(const Eigen::Matrix3Xd& points, Eigen::Matrix3Xd* grad) const {
  const auto b = nets::evaluate_field<float>(model_.templ, deform_, points.cast<float>(), model_.config.use_correction, true);
  if (grad) *grad = b.grad.cast<double>();
  return b.s.cast<double>();
}

Eigen::Matrix3Xd ShapeField::template_images(const Eigen::Matrix3Xd& points) const {
  const auto b = nets::evaluate_field<float>(model_.templ, deform_, points.cast<float>(), model_.config.use_correction, false);
  return points + b.v.cast<double>();
}

TriMesh ShapeField::reconstruct(int resolution) const {
  auto grid = geometry::GridField::cube(resolution);
  grid.fill([&](const Eigen::Matrix3Xd& p) { return values(p); });
  return geometry::marching_cubes(grid, 0.0);
}

Vec3 ShapeField::project(const Vec3& p, int steps) const {
  Vec3 q = p;
  for (int i = 0; i < steps; ++i) {
    Eigen::Matrix3Xd g;
    const double s = values(Eigen::Matrix3Xd(q), &g)(0);
    const double n2 = g.col(0).squaredNorm();
    if (n2 < 1e-12) break;
    q -= s * g.col(0) / n2;
  }
  return q;
}

TriMesh reconstruct(const Model& model, const Code& code, int resolution) {
  return ShapeField(model, code).reconstruct(resolution);
}

EmbedResult embed(const training::Checkpoint& ckpt, const losses::SampleSet& samples, const EmbedOptions& opt) {
  if (opt.iterations < 0) throw std::invalid_argument("embed: iterations must be >= 0");
  if (!(opt.lr > 0)) throw std::invalid_argument("embed: lr must be positive");
  samples.validate();
  if (samples.empty()) throw std::invalid_argument("embed: empty sample set");
  const auto& model = ckpt.model;
  const Eigen::Index k = model.config.latent_dim;

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<float> init(0.0f, static_cast<float>(opt.init_std));
  EmbedResult out;
  out.code.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) out.code(i) = init(rng);

  auto adam = diffkit::AdamState::zeros(k, opt.lr);
  training::StepOptions so;
  so.model_grad = false;
  so.priors = false;
  for (int it = 0; it < opt.iterations; ++it) {
    const auto draw = training::draw_points(samples, opt.surface_points, opt.free_points, rng);
    const auto step = training::shape_step(model, out.code, nullptr, nullptr, draw, ckpt.config, so);
    out.trace.push_back(step.terms.total);
    if (!std::isfinite(step.terms.total))
      throw Diverged("embed: non-finite loss at iteration " + std::to_string(it), out.trace);
    diffkit::adam_step(adam, out.code, step.code_grad);
  }
  return out;
}

}  // namespace dif::correspond
