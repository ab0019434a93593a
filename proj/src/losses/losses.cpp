#include "dif/losses/losses.hpp"

namespace dif::losses {

namespace {

template <typename M>
bool inside_unit_cube(const M& pts) {
  return pts.size() == 0 || pts.cwiseAbs().maxCoeff() <= 1.0f + 1e-5f;
}

}  // namespace

void SampleSet::validate() const {
  if (normals.cols() != surface.cols()) throw std::invalid_argument("samples: normals count differs from surface count");
  if (sdf.size() != free.cols()) throw std::invalid_argument("samples: sdf count differs from free point count");
  if (empty()) throw std::invalid_argument("samples: empty sample set");
  if (!surface.allFinite() || !free.allFinite() || !normals.allFinite() || !sdf.allFinite())
    throw std::invalid_argument("samples: non-finite entry");
  if (!inside_unit_cube(surface) || !inside_unit_cube(free)) throw std::invalid_argument("samples: point outside [-1,1]^3");
  for (Index i = 0; i < normals.cols(); ++i)
    if (std::abs(normals.col(i).norm() - 1.0f) > 1e-4f)
      throw std::invalid_argument("samples: normal " + std::to_string(i) + " is not unit length");
}

LossWeights LossWeights::for_category(Category c) {
  LossWeights w;
  switch (c) {
    case Category::kCar: w.smooth = 5; w.correction = 1e2; break;
    case Category::kPlane: w.smooth = 2; w.correction = 1e2; break;
    case Category::kChair: w.smooth = 5; w.correction = 5e1; break;
    case Category::kTable: w.smooth = 1; w.correction = 1e2; break;
  }
  return w;
}

void LossWeights::validate() const {
  const double all[] = {sdf_value, sdf_normal, sdf_eikonal, sdf_offsurface, normal, smooth, correction, reg, kl, delta};
  for (double v : all)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
  if (!(prior_std > 0.0)) throw std::invalid_argument("prior_std must be > 0");
}

LossBreakdown sdf_loss(const nets::DifModel<double>& model, const Eigen::VectorXd& alpha, const SampleSet& samples,
                       const LossWeights& w) {
  const auto deform = nets::deform_net(model, alpha);
  const auto packed = pack<double>(samples);
  Tape<double> t;
  auto tr = nets::trace_dif(nets::bind(t, model.templ, false), nets::bind(t, deform, false), t.dual_input(packed.points),
                            model.config.use_correction);
  ShapeTerms<double> st;
  sdf_terms(t, tr.s, tr.grad, t.constant_ref(packed.normals), t.constant_ref(packed.target), packed.n_surface, w.delta, st);
  LossBreakdown b;
  b.sdf_value = st.sdf_value.scalar();
  b.sdf_normal = st.sdf_normal.scalar();
  b.sdf_eikonal = st.sdf_eikonal.scalar();
  b.sdf_offsurface = st.sdf_offsurface.scalar();
  b.has_surface = st.has_surface;
  b.sdf = w.sdf_value * b.sdf_value + w.sdf_normal * b.sdf_normal + w.sdf_eikonal * b.sdf_eikonal +
          w.sdf_offsurface * b.sdf_offsurface;
  b.total = b.sdf;
  return b;
}

double normal_consistency_loss(const nets::SineMlp<double>& T, const nets::GeneratedWeights<double>& omega,
                               const Eigen::Matrix3Xd& surface, const Eigen::Matrix3Xd& normals) {
  if (surface.cols() == 0) throw std::invalid_argument("normal consistency: no surface samples");
  const auto deform = nets::deform_net(omega, T.first_omega, T.hidden_omega);
  Tape<double> t;
  const Matrix<double> pts = surface, nrm = normals;
  auto tr = nets::trace_dif(nets::bind(t, T, false), nets::bind(t, deform, false), t.dual_input(pts), true);
  return mean_one_minus_cos(t, tr.grad_template, t.constant_ref(nrm)).scalar();
}

double smoothness_loss(const nets::GeneratedWeights<double>& omega, const Eigen::Matrix3Xd& points) {
  const auto deform = nets::deform_net(omega, 30.0, 30.0);
  Tape<double> t;
  const Matrix<double> pts = points;
  return smoothness_term(t, nets::forward(nets::bind(t, deform, false), t.dual_input(pts))).scalar();
}

double correction_loss(const nets::GeneratedWeights<double>& omega, const Eigen::Matrix3Xd& points) {
  const auto deform = nets::deform_net(omega, 30.0, 30.0);
  Tape<double> t;
  const Matrix<double> pts = points;
  return correction_term(t, nets::forward(nets::bind(t, deform, false), t.dual_input(pts))).scalar();
}

double latent_reg(const std::vector<Eigen::VectorXd>& alphas) {
  double s = 0.0;
  for (const auto& a : alphas) s += a.squaredNorm();
  return s;
}

double kl_reg(const Eigen::VectorXd& alpha, const Eigen::VectorXd& sigma, double prior_std) {
  if (alpha.size() != sigma.size()) throw std::invalid_argument("kl_reg: alpha and sigma lengths differ");
  if (!(prior_std > 0.0)) throw std::invalid_argument("kl_reg: prior std must be > 0");
  double kl = 0.0;
  for (Index i = 0; i < alpha.size(); ++i) {
    const double s = sigma(i);
    if (!(s > 0.0)) throw std::invalid_argument("kl_reg: sigma[" + std::to_string(i) + "] must be > 0");
    kl += std::log(prior_std / s) + (s * s + alpha(i) * alpha(i)) / (2.0 * prior_std * prior_std) - 0.5;
  }
  return kl;
}

LossBreakdown total_loss(const nets::DifModel<double>& model, const Eigen::VectorXd& alpha, const SampleSet& samples,
                         const LossWeights& w, const Ablation& ab) {
  const auto deform = nets::deform_net(model, alpha);
  const auto packed = pack<double>(samples);
  Tape<double> t;
  const bool corr = model.config.use_correction && !ab.no_correction;
  auto tr = nets::trace_dif(nets::bind(t, model.templ, false), nets::bind(t, deform, false), t.dual_input(packed.points), corr);
  Ablation eff = ab;
  eff.no_correction = !corr;
  auto st = shape_terms(t, tr, t.constant_ref(packed.normals), t.constant_ref(packed.target), packed.n_surface, w.delta, eff);
  const Matrix<double> a = alpha;
  const double reg = latent_norm_term(t, t.constant_ref(a)).scalar();
  LossWeights ew = w;
  if (ab.no_normal) ew.normal = 0;
  if (ab.no_smooth) ew.smooth = 0;
  if (!corr) ew.correction = 0;
  return breakdown(st, reg, w.reg, ew);
}

}  // namespace dif::losses
