#pragma once

// Training objectives. Each term is a per-point mean; a shape's total is the
// weighted sum of its terms, and a batch loss is the mean over its shapes.

#include "dif/diffkit/tape.hpp"
#include "dif/nets/networks.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iterator>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dif::losses {

using diffkit::Index;
using diffkit::Matrix;
using diffkit::Tape;
using diffkit::Var;
using diffkit::Vector;

/// Training samples of one shape. Points are stored column-wise.
struct SampleSet {
  Eigen::Matrix3Xf surface;
  Eigen::Matrix3Xf normals;
  Eigen::Matrix3Xf free;
  Eigen::VectorXf sdf;

  Index surface_count() const { return surface.cols(); }
  Index free_count() const { return free.cols(); }
  bool empty() const { return surface.cols() == 0 && free.cols() == 0; }

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

enum class Category { kCar, kPlane, kChair, kTable };

struct LossWeights {
  double sdf_value = 3e3;
  double sdf_normal = 1e2;
  double sdf_eikonal = 5e1;
  double sdf_offsurface = 5e2;
  double normal = 1e2;       // w1
  double smooth = 5.0;       // w2
  double correction = 1e2;   // w3
  double reg = 1e6;          // w4
  double kl = 1e2;           // w5
  double delta = 100.0;      // rho(s) = exp(-delta |s|)
  double prior_std = 0.01;

  static LossWeights for_category(Category c);
  void validate() const;
};

/// Switches that remove a prior (and its term) from training.
struct Ablation {
  bool no_normal = false;
  bool no_smooth = false;
  bool no_correction = false;
};

struct LossBreakdown {
  double sdf_value = 0, sdf_normal = 0, sdf_eikonal = 0, sdf_offsurface = 0;
  double sdf = 0;  // weighted sum of the four terms above
  double normal = 0, smooth = 0, correction = 0, reg = 0;
  double reg_weight = 0;  // w4 or w5, whichever regularizer is in use
  double total = 0;
  bool has_surface = true;

  /// Recomputes the weighted total from the individual terms.
  double recombine(const LossWeights& w) const {
    return w.sdf_value * sdf_value + w.sdf_normal * sdf_normal + w.sdf_eikonal * sdf_eikonal +
           w.sdf_offsurface * sdf_offsurface + w.normal * normal + w.smooth * smooth + w.correction * correction +
           reg_weight * reg;
  }
};

// ---- tape-level terms ---------------------------------------------------------

/// Term nodes for one shape. Points are laid out as [surface | free].
template <typename S>
struct ShapeTerms {
  Var<S> sdf_value, sdf_normal, sdf_eikonal, sdf_offsurface;
  Var<S> normal, smooth, correction;
  bool has_surface = true;
  bool has_free = true;
};

template <typename S>
Var<S> zero_scalar(Tape<S>& t) {
  return t.constant(Matrix<S>::Zero(1, 1));
}

/// Mean of (1 - <g / |g|, n>) over columns; n is unit length.
template <typename S>
Var<S> mean_one_minus_cos(Tape<S>& t, Var<S> g, Var<S> n) {
  Var<S> inv_norm = t.exp(t.scale(t.log(t.scale(t.norm(g), S(1), S(1e-20))), S(-1)));
  return t.mean_all(t.scale(t.mul(t.inner(g, n), inv_norm), S(-1), S(1)));
}

/// The four regression terms from the field value s (1 x N) and its spatial
/// gradient (3 x N). target is 1 x N with zeros on the surface part.
template <typename S>
void sdf_terms(Tape<S>& t, Var<S> s, Var<S> grad, Var<S> normals, Var<S> target, Index n_surface, S delta, ShapeTerms<S>& out) {
  const Index n = s.value().cols();
  const Index n_free = n - n_surface;
  out.has_surface = n_surface > 0;
  out.has_free = n_free > 0;
  if (n == 0) throw std::invalid_argument("sdf loss: empty sample set");
  out.sdf_value = t.mean_all(t.abs(t.sub(s, target)));
  out.sdf_eikonal = t.mean_all(t.abs(t.scale(t.norm(grad), S(1), S(-1))));
  out.sdf_normal = out.has_surface ? mean_one_minus_cos(t, t.slice_cols(grad, 0, n_surface), normals) : zero_scalar(t);
  out.sdf_offsurface = out.has_free ? t.mean_all(t.exp(t.scale(t.abs(t.slice_cols(s, n_surface, n_free)), -delta))) : zero_scalar(t);
}

/// Mean over points of sum_d |grad v_d|; deform is the 4 x 4N dual output.
template <typename S>
Var<S> smoothness_term(Tape<S>& t, Var<S> deform) {
  Var<S> acc = t.norm(t.grad_of(deform, 0));
  for (int d = 1; d < 3; ++d) acc = t.add(acc, t.norm(t.grad_of(deform, d)));
  return t.mean_all(acc);
}

template <typename S>
Var<S> correction_term(Tape<S>& t, Var<S> deform) {
  return t.mean_all(t.abs(t.value_of(t.slice_rows(deform, 3, 1))));
}

/// All per-shape terms from a traced field.
template <typename S>
ShapeTerms<S> shape_terms(Tape<S>& t, const nets::DifTrace<S>& tr, Var<S> normals, Var<S> target, Index n_surface, S delta,
                          const Ablation& ab) {
  ShapeTerms<S> out;
  sdf_terms(t, tr.s, tr.grad, normals, target, n_surface, delta, out);
  out.normal = (!ab.no_normal && n_surface > 0) ? mean_one_minus_cos(t, t.slice_cols(tr.grad_template, 0, n_surface), normals)
                                                 : zero_scalar(t);
  out.smooth = ab.no_smooth ? zero_scalar(t) : smoothness_term(t, tr.deform);
  out.correction = ab.no_correction ? zero_scalar(t) : correction_term(t, tr.deform);
  return out;
}

/// |alpha|^2 averaged over code entries.
template <typename S>
Var<S> latent_norm_term(Tape<S>& t, Var<S> alpha) {
  return t.mean_all(t.mul(alpha, alpha));
}

/// KL(N(alpha, sigma^2) || N(0, prior^2)) averaged over code entries, with
/// sigma = exp(log_sigma).
template <typename S>
Var<S> kl_term(Tape<S>& t, Var<S> alpha, Var<S> log_sigma, S prior) {
  const S inv2p2 = S(1) / (S(2) * prior * prior);
  Var<S> a = t.scale(log_sigma, S(-1), std::log(prior));
  Var<S> b = t.scale(t.add(t.exp(t.scale(log_sigma, S(2))), t.mul(alpha, alpha)), inv2p2, S(-0.5));
  return t.mean_all(t.add(a, b));
}

/// Weighted per-shape total. reg is either the norm or the KL term.
template <typename S>
Var<S> weighted_total(Tape<S>& t, const ShapeTerms<S>& st, Var<S> reg, S reg_weight, const LossWeights& w) {
  const std::pair<double, Var<S>> parts[] = {
      {w.sdf_value, st.sdf_value}, {w.sdf_normal, st.sdf_normal}, {w.sdf_eikonal, st.sdf_eikonal},
      {w.sdf_offsurface, st.sdf_offsurface}, {w.normal, st.normal}, {w.smooth, st.smooth},
      {w.correction, st.correction}, {static_cast<double>(reg_weight), reg}};
  Var<S> acc = t.scale(parts[0].second, static_cast<S>(parts[0].first));
  for (std::size_t i = 1; i < std::size(parts); ++i) acc = t.add(acc, t.scale(parts[i].second, static_cast<S>(parts[i].first)));
  return acc;
}

template <typename S>
LossBreakdown breakdown(const ShapeTerms<S>& st, double reg, double reg_weight, const LossWeights& w) {
  LossBreakdown b;
  b.sdf_value = st.sdf_value.scalar();
  b.sdf_normal = st.sdf_normal.scalar();
  b.sdf_eikonal = st.sdf_eikonal.scalar();
  b.sdf_offsurface = st.sdf_offsurface.scalar();
  b.sdf = w.sdf_value * b.sdf_value + w.sdf_normal * b.sdf_normal + w.sdf_eikonal * b.sdf_eikonal +
          w.sdf_offsurface * b.sdf_offsurface;
  b.normal = st.normal.scalar();
  b.smooth = st.smooth.scalar();
  b.correction = st.correction.scalar();
  b.reg = reg;
  b.reg_weight = reg_weight;
  b.has_surface = st.has_surface;
  b.total = b.recombine(w);
  return b;
}

/// Points [surface | free], target [0 | sdf] and normals as S-typed matrices.
template <typename S>
struct PackedSamples {
  Matrix<S> points;
  Matrix<S> target;
  Matrix<S> normals;
  Index n_surface = 0;
};

template <typename S>
PackedSamples<S> pack(const SampleSet& s) {
  PackedSamples<S> p;
  p.n_surface = s.surface_count();
  const Index n = s.surface_count() + s.free_count();
  p.points.resize(3, n);
  p.points.leftCols(s.surface_count()) = s.surface.cast<S>();
  p.points.rightCols(s.free_count()) = s.free.cast<S>();
  p.target = Matrix<S>::Zero(1, n);
  p.target.rightCols(s.free_count()) = s.sdf.transpose().cast<S>();
  p.normals = s.normals.cast<S>();
  return p;
}

// ---- plain evaluation -----------------------------------------------------------

/// L_sdf and its four terms for the field of (model, alpha) on `samples`.
/// Only the sdf fields and total (= weighted sdf) of the breakdown are set.
LossBreakdown sdf_loss(const nets::DifModel<double>& model, const Eigen::VectorXd& alpha, const SampleSet& samples,
                       const LossWeights& w);

/// Mean 1 - <grad T(p + v), n> over surface samples.
double normal_consistency_loss(const nets::SineMlp<double>& T, const nets::GeneratedWeights<double>& omega,
                               const Eigen::Matrix3Xd& surface, const Eigen::Matrix3Xd& normals);
/// Mean over points of sum_d |grad v_d|.
double smoothness_loss(const nets::GeneratedWeights<double>& omega, const Eigen::Matrix3Xd& points);
/// Mean |delta_s| over points.
double correction_loss(const nets::GeneratedWeights<double>& omega, const Eigen::Matrix3Xd& points);
/// Sum over codes of |alpha_i|^2.
double latent_reg(const std::vector<Eigen::VectorXd>& alphas);
/// Closed-form KL between N(alpha, diag sigma^2) and N(0, prior^2 I), summed over entries.
double kl_reg(const Eigen::VectorXd& alpha, const Eigen::VectorXd& sigma, double prior_std);

/// Every term for one shape with the norm regularizer.
LossBreakdown total_loss(const nets::DifModel<double>& model, const Eigen::VectorXd& alpha, const SampleSet& samples,
                         const LossWeights& w, const Ablation& ab = {});

}  // namespace dif::losses
