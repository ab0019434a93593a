#include "dif/correspond/correspond.hpp"
#include "dif/diffkit/adam.hpp"

#include <cmath>
#include <sstream>

namespace dif::correspond {

using diffkit::Matrix;
using diffkit::Tape;
using diffkit::Var;

namespace {

struct EditEval {
  double loss = 0;
  double handle = 0;   // max handle residual
  double surface = 0;  // max |Phi(p2)|
  Eigen::VectorXf grad;
};

EditEval edit_objective(const Model& model, const Eigen::VectorXf& code, const Eigen::VectorXf& alpha,
                        const Matrix<float>& p2, const Matrix<float>& p1t, const EditOptions& opt, bool want_grad) {
  Tape<float> t;
  auto bt = nets::bind(t, model.templ, false);
  auto bh = nets::bind(t, model.hyper, false);
  const Matrix<float> c = code, a = alpha;
  Var<float> cv = t.param_ref(c);
  auto deform = nets::hyper_forward(bh, cv, model.templ.first_omega, model.templ.hidden_omega);
  Var<float> p = t.constant_ref(p2);
  Var<float> d = nets::forward(deform, p);
  Var<float> q = t.add(p, t.slice_rows(d, 0, 3));
  Var<float> r = t.sub(q, t.constant_ref(p1t));
  Var<float> s = nets::forward(bt, q);
  if (model.config.use_correction) s = t.add(s, t.slice_rows(d, 3, 1));
  Var<float> handle = t.sum_all(t.mul(r, r));
  Var<float> surface = t.sum_all(t.abs(s));
  Var<float> reg = t.mean_all(t.abs(t.sub(cv, t.constant_ref(a))));
  Var<float> loss = t.add(t.add(t.scale(handle, static_cast<float>(opt.w_handle)), t.scale(surface, static_cast<float>(opt.w_surface))),
                          t.scale(reg, static_cast<float>(opt.w_code)));
  EditEval e;
  e.loss = loss.scalar();
  e.handle = r.value().colwise().norm().maxCoeff();
  e.surface = s.value().cwiseAbs().maxCoeff();
  if (want_grad) {
    t.backward(loss);
    e.grad = t.gradient_vector();
  }
  return e;
}

}  // namespace

EditResult edit(const Model& model, const EditRequest& req, const EditOptions& opt) {
  if (req.handles.empty()) throw EditError("edit: no handles");
  if (opt.iterations < 0) throw EditError("edit: iterations must be >= 0");
  if (!(opt.lr > 0)) throw EditError("edit: lr must be positive");
  if (opt.log_every < 1) throw EditError("edit: log_every must be >= 1");
  const ShapeField field(model, req.alpha);
  const auto h = static_cast<Eigen::Index>(req.handles.size());
  Eigen::Matrix3Xd p1(3, h), p2(3, h);
  for (Eigen::Index i = 0; i < h; ++i) {
    const auto& hd = req.handles[static_cast<std::size_t>(i)];
    if (!hd.p1.allFinite() || !hd.p2.allFinite()) throw EditError("edit: handle " + std::to_string(i) + " is not finite");
    p1.col(i) = hd.p1;
    p2.col(i) = hd.p2;
  }
  Eigen::Matrix3Xd p1t = p1;
  if (req.mode == EditMode::kMove) {
    const Eigen::VectorXd s = field.values(p1);
    for (Eigen::Index i = 0; i < h; ++i)
      if (std::abs(s(i)) > opt.eps_surf) {
        std::ostringstream m;
        m << "edit: handle " << i << " start point is off the surface (|Phi| = " << std::abs(s(i)) << " > " << opt.eps_surf << ")";
        throw EditError(m.str());
      }
    p1t = field.template_images(p1);
  }

  EditResult out;
  for (Eigen::Index i = 0; i < h; ++i) out.p1_template.push_back(p1t.col(i));
  const Matrix<float> p2f = p2.cast<float>(), p1f = p1t.cast<float>();
  Eigen::VectorXf code = req.alpha;
  auto adam = diffkit::AdamState::zeros(code.size(), opt.lr);
  for (int it = 0; it < opt.iterations; ++it) {
    const auto e = edit_objective(model, code, req.alpha, p2f, p1f, opt, true);
    out.trace.push_back(e.loss);
    if (!std::isfinite(e.loss)) throw Diverged("edit: non-finite objective at iteration " + std::to_string(it), out.trace);
    diffkit::adam_step(adam, code, e.grad);
  }
  for (std::size_t b = 0; b + static_cast<std::size_t>(opt.log_every) <= out.trace.size(); b += static_cast<std::size_t>(opt.log_every)) {
    double sum = 0;
    for (int i = 0; i < opt.log_every; ++i) sum += out.trace[b + static_cast<std::size_t>(i)];
    out.log.push_back(sum / opt.log_every);
  }
  const auto last = edit_objective(model, code, req.alpha, p2f, p1f, opt, false);
  out.handle_residual = last.handle;
  out.surface_residual = last.surface;
  out.alpha = code;
  if (opt.resolution > 0) out.mesh = reconstruct(model, code, opt.resolution);
  return out;
}

}  // namespace dif::correspond
