#include "dif/losses/losses.hpp"
#include "fd_oracle.hpp"

#include <doctest.h>

#include <random>

using namespace dif;
using namespace dif::losses;
using dif::test::central_gradient;
using dif::test::rel_err;
using nets::DifModel;
using nets::ModelConfig;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.latent_dim = 4;
  c.template_width = 8;
  c.template_layers = 2;
  c.deform_width = 8;
  c.deform_layers = 2;
  c.hyper_width = 8;
  c.hyper_layers = 1;
  return c;
}

Eigen::Vector3d unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

// Unit-sphere radius-r samples with the exact SDF.
SampleSet sphere_samples(int ns, int nf, double r, std::mt19937_64& rng) {
  SampleSet s;
  s.surface.resize(3, ns);
  s.normals.resize(3, ns);
  for (int i = 0; i < ns; ++i) {
    const Eigen::Vector3d n = unit(rng);
    s.surface.col(i) = (r * n).cast<float>();
    s.normals.col(i) = n.cast<float>();
  }
  std::uniform_real_distribution<double> u(-1, 1);
  s.free.resize(3, nf);
  s.sdf.resize(nf);
  for (int i = 0; i < nf; ++i) {
    const Eigen::Vector3d p(u(rng), u(rng), u(rng));
    s.free.col(i) = p.cast<float>();
    s.sdf(i) = static_cast<float>(p.norm() - r);
  }
  return s;
}

nets::GeneratedWeights<double> constant_omega(const Eigen::Vector3d& v0, double ds) {
  nets::GeneratedWeights<double> g;
  g.shapes = {{8, 3}, {4, 8}};
  g.omega = Eigen::VectorXd::Zero(g.expected_size());
  g.omega.tail(4) << v0, ds;
  return g;
}

Eigen::VectorXd random_code(int k, std::mt19937_64& rng, double std) {
  std::normal_distribution<double> n(0.0, std);
  Eigen::VectorXd a(k);
  for (int i = 0; i < k; ++i) a(i) = n(rng);
  return a;
}

// Full per-shape objective on a tape with every group trainable; returns the
// loss and (optionally) d loss / d [model params, alpha].
double objective(const DifModel<double>& model, const Eigen::VectorXd& alpha, const SampleSet& samples, const LossWeights& w,
                 Eigen::VectorXd* grad) {
  Tape<double> t;
  auto bt = nets::bind(t, model.templ, true);
  auto bh = nets::bind(t, model.hyper, true);
  const Matrix<double> a = alpha;
  auto av = t.param_ref(a);
  auto deform = nets::hyper_forward(bh, av, model.templ.first_omega, model.templ.hidden_omega);
  const auto packed = pack<double>(samples);
  auto tr = nets::trace_dif(bt, deform, t.dual_input(packed.points), true);
  auto st = shape_terms(t, tr, t.constant_ref(packed.normals), t.constant_ref(packed.target), packed.n_surface, w.delta, {});
  auto loss = weighted_total(t, st, latent_norm_term(t, av), w.reg, w);
  if (grad) {
    t.backward(loss);
    *grad = t.gradient_vector();
  }
  return loss.scalar();
}

}  // namespace

TEST_CASE("category weight presets") {
  const LossWeights w;
  CHECK(w.sdf_value == 3e3);
  CHECK(w.sdf_normal == 1e2);
  CHECK(w.sdf_eikonal == 5e1);
  CHECK(w.sdf_offsurface == 5e2);
  CHECK(w.normal == 1e2);
  CHECK(w.reg == 1e6);
  CHECK(w.kl == 1e2);
  CHECK(w.prior_std == 0.01);
  const Category cats[] = {Category::kCar, Category::kPlane, Category::kChair, Category::kTable};
  const double w2[] = {5, 2, 5, 1};
  const double w3[] = {1e2, 1e2, 5e1, 1e2};
  for (int i = 0; i < 4; ++i) {
    CHECK(LossWeights::for_category(cats[i]).smooth == w2[i]);
    CHECK(LossWeights::for_category(cats[i]).correction == w3[i]);
  }
}

TEST_CASE("sdf terms vanish for the analytic sphere SDF except the off-surface penalty") {
  std::mt19937_64 rng(1);
  const auto samples = sphere_samples(200, 300, 0.5, rng);
  const auto packed = pack<double>(samples);
  // Stored normals are 32-bit; renormalize in 64-bit so the field is exact.
  Matrix<double> normals = packed.normals.colwise().normalized();
  Matrix<double> s(1, packed.points.cols()), g(3, packed.points.cols());
  for (Index i = 0; i < s.cols(); ++i) {
    const Eigen::Vector3d p = packed.points.col(i);
    s(0, i) = i < packed.n_surface ? 0.0 : packed.target(0, i);
    g.col(i) = i < packed.n_surface ? Eigen::Vector3d(normals.col(i)) : Eigen::Vector3d(p.normalized());
  }
  Tape<double> t;
  ShapeTerms<double> st;
  sdf_terms(t, t.constant(s), t.constant(g), t.constant(normals), t.constant(packed.target), packed.n_surface, 100.0, st);
  CHECK(st.sdf_value.scalar() == 0.0);
  CHECK(std::abs(st.sdf_normal.scalar()) < 1e-15);
  CHECK(std::abs(st.sdf_eikonal.scalar()) < 1e-15);
  double expect = 0.0;
  for (Index i = 0; i < samples.free_count(); ++i) expect += std::exp(-100.0 * std::abs(static_cast<double>(samples.sdf(i))));
  expect /= static_cast<double>(samples.free_count());
  CHECK(expect > 0.0);
  CHECK(st.sdf_offsurface.scalar() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("off-surface penalty rho") {
  for (auto [v, expect] : {std::pair{0.0, 1.0}, std::pair{0.05, std::exp(-5.0)}, std::pair{-0.05, std::exp(-5.0)}}) {
    Tape<double> t;
    ShapeTerms<double> st;
    Matrix<double> s = Matrix<double>::Constant(1, 1, v);
    Matrix<double> g = Matrix<double>::Zero(3, 1);
    sdf_terms(t, t.constant(s), t.constant(g), t.constant(Matrix<double>(3, 0)), t.constant(s), 0, 100.0, st);
    CHECK(st.sdf_offsurface.scalar() == doctest::Approx(expect).epsilon(1e-12));
    CHECK_FALSE(st.has_surface);
    CHECK(st.sdf_normal.scalar() == 0.0);
  }
  CHECK(std::exp(-5.0) == doctest::Approx(6.74e-3).epsilon(1e-3));
}

TEST_CASE("normal consistency: aligned and orthogonal gradients") {
  std::mt19937_64 rng(2);
  Matrix<double> n(3, 50), o(3, 50);
  for (int i = 0; i < 50; ++i) {
    n.col(i) = unit(rng);
    o.col(i) = Eigen::Vector3d(n.col(i)).cross(unit(rng)).normalized();
  }
  Tape<double> t;
  CHECK(std::abs(mean_one_minus_cos(t, t.constant(n), t.constant(n)).scalar()) < 1e-15);
  CHECK(mean_one_minus_cos(t, t.constant(o), t.constant(n)).scalar() == doctest::Approx(1.0).epsilon(1e-14));
  // Only the direction of the gradient matters.
  const Matrix<double> g = n + 0.3 * o;
  const double c1 = mean_one_minus_cos(t, t.constant(g), t.constant(n)).scalar();
  CHECK(mean_one_minus_cos(t, t.constant(Matrix<double>(7.5 * g)), t.constant(n)).scalar() == doctest::Approx(c1).epsilon(1e-12));
  CHECK(mean_one_minus_cos(t, t.constant(Matrix<double>(-n)), t.constant(n)).scalar() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("normal consistency: matches a direct per-point re-evaluation") {
  auto model = DifModel<double>::init(tiny_config(), 3);
  std::mt19937_64 rng(3);
  const Eigen::VectorXd alpha = random_code(4, rng, 0.5);
  const auto omega = nets::hyper_forward(model.hyper, alpha);
  const auto D = nets::deform_net(omega, 30.0, 30.0);
  Eigen::Matrix3Xd pts(3, 40), nrm(3, 40);
  double expect = 0.0;
  for (int i = 0; i < 40; ++i) {
    pts.col(i) = 0.5 * unit(rng);
    nrm.col(i) = unit(rng);
    const auto v = nets::deform_eval(D, Eigen::Vector3d(pts.col(i))).out.v;
    const auto tg = nets::template_eval(model.templ, Eigen::Vector3d(pts.col(i) + v)).grad;
    expect += 1.0 - tg.normalized().dot(nrm.col(i));
  }
  expect /= 40.0;
  CHECK(normal_consistency_loss(model.templ, omega, pts, nrm) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("smoothness: constant and linear fields") {
  std::mt19937_64 rng(4);
  Eigen::Matrix3Xd pts = Eigen::Matrix3Xd::Random(3, 30);
  CHECK(smoothness_loss(constant_omega(Eigen::Vector3d(0.1, 0.2, 0.3), 0.0), pts) == 0.0);

  const double a = -0.7;
  Tape<double> t;
  Matrix<double> W = Matrix<double>::Zero(4, 3), b = Matrix<double>::Zero(4, 1);
  W(0, 0) = a;
  const Matrix<double> P = pts;
  auto field = t.affine(t.constant(W), t.constant(b), t.dual_input(P));
  CHECK(smoothness_term(t, field).scalar() == doctest::Approx(std::abs(a)).epsilon(1e-14));
}

TEST_CASE("smoothness: matches a finite-difference jacobian of the deformation field") {
  auto model = DifModel<double>::init(tiny_config(), 5);
  std::mt19937_64 rng(5);
  const auto omega = nets::hyper_forward(model.hyper, random_code(4, rng, 0.5));
  const auto D = nets::deform_net(omega, 30.0, 30.0);
  Eigen::Matrix3Xd pts = 0.8 * Eigen::Matrix3Xd::Random(3, 30);
  double expect = 0.0;
  for (int i = 0; i < 30; ++i) {
    auto J = dif::test::central_jacobian(
        [&](const Eigen::Vector3d& q) { return Eigen::VectorXd(nets::deform_eval(D, q).out.v); }, Eigen::Vector3d(pts.col(i)), 1e-5);
    for (int d = 0; d < 3; ++d) expect += J.row(d).norm();
  }
  expect /= 30.0;
  CHECK(smoothness_loss(omega, pts) == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("correction: zero, constant and re-evaluated") {
  Eigen::Matrix3Xd pts = Eigen::Matrix3Xd::Random(3, 25);
  CHECK(correction_loss(constant_omega(Eigen::Vector3d::Zero(), 0.0), pts) == 0.0);
  CHECK(correction_loss(constant_omega(Eigen::Vector3d::Zero(), 0.02), pts) == doctest::Approx(0.02).epsilon(1e-14));

  auto model = DifModel<double>::init(tiny_config(), 6);
  std::mt19937_64 rng(6);
  const auto omega = nets::hyper_forward(model.hyper, random_code(4, rng, 0.5));
  double expect = 0.0;
  for (int i = 0; i < 25; ++i) expect += std::abs(nets::deform_eval(omega, Eigen::Vector3d(pts.col(i))).out.delta_s);
  CHECK(correction_loss(omega, pts) == doctest::Approx(expect / 25.0).epsilon(1e-12));
}

TEST_CASE("latent_reg") {
  CHECK(latent_reg({Eigen::VectorXd::Zero(8), Eigen::VectorXd::Zero(8)}) == 0.0);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(8);
  a(0) = 3;
  a(1) = 4;
  CHECK(latent_reg({a}) == 25.0);
  std::mt19937_64 rng(7);
  std::vector<Eigen::VectorXd> codes;
  double expect = 0.0;
  for (int i = 0; i < 6; ++i) {
    codes.push_back(random_code(8, rng, 1.0));
    for (int j = 0; j < 8; ++j) expect += codes.back()(j) * codes.back()(j);
  }
  CHECK(latent_reg(codes) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("kl_reg: closed form, Monte-Carlo oracle, and invalid sigma") {
  const double p = 0.01;
  CHECK(kl_reg(Eigen::VectorXd::Zero(5), Eigen::VectorXd::Constant(5, p), p) == doctest::Approx(0.0));
  CHECK(kl_reg(Eigen::VectorXd::Constant(1, 0.01), Eigen::VectorXd::Constant(1, 0.01), p) == doctest::Approx(0.5).epsilon(1e-12));
  Eigen::VectorXd bad = Eigen::VectorXd::Constant(3, p);
  bad(1) = 0.0;
  CHECK_THROWS_AS(kl_reg(Eigen::VectorXd::Zero(3), bad, p), std::invalid_argument);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.3, 2.0);
  std::normal_distribution<double> nrm;
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd alpha(4), sigma(4);
    for (int i = 0; i < 4; ++i) {
      alpha(i) = p * nrm(rng);
      sigma(i) = p * u(rng);
    }
    // E_q[log q(z) - log p(z)]
    const int draws = 400000;
    double mc = 0.0;
    for (int n = 0; n < draws; ++n) {
      double lq = 0.0, lp = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double e = nrm(rng);
        const double z = alpha(i) + sigma(i) * e;
        lq += -std::log(sigma(i)) - 0.5 * e * e;
        lp += -std::log(p) - 0.5 * (z / p) * (z / p);
      }
      mc += lq - lp;
    }
    mc /= draws;
    CHECK(kl_reg(alpha, sigma, p) == doctest::Approx(mc).epsilon(0.02));

    Tape<double> t;
    const Matrix<double> a = alpha, ls = sigma.array().log().matrix();
    CHECK(kl_term(t, t.constant(a), t.constant(ls), p).scalar() == doctest::Approx(kl_reg(alpha, sigma, p) / 4.0).epsilon(1e-12));
  }
}

TEST_CASE("total_loss: breakdown recombines, terms non-negative, sdf-only weights") {
  auto model = DifModel<double>::init(tiny_config(), 9);
  std::mt19937_64 rng(9);
  const auto samples = sphere_samples(64, 64, 0.5, rng);
  const Eigen::VectorXd alpha = random_code(4, rng, 0.01);
  LossWeights w = LossWeights::for_category(Category::kTable);
  const auto b = total_loss(model, alpha, samples, w);
  CHECK(b.total == doctest::Approx(b.recombine(w)).epsilon(1e-14));
  for (double v : {b.sdf_value, b.sdf_normal, b.sdf_eikonal, b.sdf_offsurface, b.normal, b.smooth, b.correction, b.reg})
    CHECK(v >= 0.0);
  CHECK(b.sdf_normal <= 2.0);
  CHECK(b.normal <= 2.0);
  CHECK(b.reg == doctest::Approx(alpha.squaredNorm() / 4.0));

  LossWeights only_sdf = w;
  only_sdf.normal = only_sdf.smooth = only_sdf.correction = only_sdf.reg = 0.0;
  const auto s = total_loss(model, alpha, samples, only_sdf);
  CHECK(s.total == doctest::Approx(sdf_loss(model, alpha, samples, w).sdf).epsilon(1e-14));

  const auto ab = total_loss(model, alpha, samples, w, Ablation{true, true, true});
  CHECK(ab.normal == 0.0);
  CHECK(ab.smooth == 0.0);
  CHECK(ab.correction == 0.0);
}

TEST_CASE("loss values are invariant to duplicating every sample") {
  auto model = DifModel<double>::init(tiny_config(), 10);
  std::mt19937_64 rng(10);
  const auto samples = sphere_samples(40, 60, 0.5, rng);
  SampleSet twice;
  twice.surface.resize(3, 80);
  twice.surface << samples.surface, samples.surface;
  twice.normals.resize(3, 80);
  twice.normals << samples.normals, samples.normals;
  twice.free.resize(3, 120);
  twice.free << samples.free, samples.free;
  twice.sdf.resize(120);
  twice.sdf << samples.sdf, samples.sdf;
  const Eigen::VectorXd alpha = random_code(4, rng, 0.01);
  const LossWeights w;
  const auto a = total_loss(model, alpha, samples, w);
  const auto b = total_loss(model, alpha, twice, w);
  CHECK(b.total == doctest::Approx(a.total).epsilon(1e-12));
  CHECK(b.smooth == doctest::Approx(a.smooth).epsilon(1e-12));
}

TEST_CASE("weight gradients of each term match finite differences for every parameter group") {
  auto model = DifModel<double>::init(tiny_config(), 11);
  std::mt19937_64 rng(11);
  const auto samples = sphere_samples(4, 4, 0.5, rng);
  const Eigen::VectorXd alpha = random_code(4, rng, 0.3);
  const Index n_model = model.num_params();
  const Index n_t = model.template_param_count();

  LossWeights zero;
  zero.sdf_value = zero.sdf_normal = zero.sdf_eikonal = zero.sdf_offsurface = 0;
  zero.normal = zero.smooth = zero.correction = zero.reg = 0;
  zero.delta = 10.0;
  std::vector<std::pair<const char*, LossWeights>> cases;
  for (int term = 0; term < 8; ++term) {
    LossWeights w = zero;
    double* slots[] = {&w.sdf_value, &w.sdf_normal, &w.sdf_eikonal, &w.sdf_offsurface, &w.normal, &w.smooth, &w.correction, &w.reg};
    *slots[term] = 1.0;
    static const char* names[] = {"value", "sdf_normal", "eikonal", "offsurface", "normal", "smooth", "correction", "reg"};
    cases.emplace_back(names[term], w);
  }

  for (const auto& [name, w] : cases) {
    CAPTURE(name);
    Eigen::VectorXd analytic;
    objective(model, alpha, samples, w, &analytic);
    Eigen::VectorXd x(n_model + alpha.size());
    x << model.flatten(), alpha;
    auto f = [&](const Eigen::VectorXd& y) {
      auto m = model;
      m.unflatten(y.head(n_model));
      return objective(m, y.tail(alpha.size()), samples, w, nullptr);
    };
    const Eigen::VectorXd fd = central_gradient(f, x, 1e-6);
    const Index n_psi = n_model - n_t;
    if (fd.head(n_t).norm() > 0) CHECK(rel_err(analytic.head(n_t), fd.head(n_t)) < 1e-4);
    if (fd.segment(n_t, n_psi).norm() > 0) CHECK(rel_err(analytic.segment(n_t, n_psi), fd.segment(n_t, n_psi)) < 1e-4);
    if (fd.tail(alpha.size()).norm() > 0) CHECK(rel_err(analytic.tail(alpha.size()), fd.tail(alpha.size())) < 1e-4);
  }
}
