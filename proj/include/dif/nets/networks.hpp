#pragma once

// Template field T, Deform-Net D and Hyper-Net Psi, plus their composition
// s = T(p + v) + delta_s with (v, delta_s) = D_{Psi(alpha)}(p).

#include "dif/diffkit/adam.hpp"
#include "dif/diffkit/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dif::nets {

using diffkit::Index;
using diffkit::Matrix;
using diffkit::Tape;
using diffkit::Var;
using diffkit::Vector;
template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Architecture hyper-parameters; the defaults are the full-size model.
struct ModelConfig {
  int latent_dim = 128;
  int template_width = 128;
  int template_layers = 4;  // hidden sine layers
  int deform_width = 128;
  int deform_layers = 3;
  int hyper_width = 256;
  int hyper_layers = 2;  // hidden ReLU layers per head
  double first_omega = 30.0;
  double hidden_omega = 30.0;
  double hyper_out_scale = 1e-2;
  bool use_correction = true;

  std::vector<Index> template_dims() const {
    std::vector<Index> d{3};
    for (int i = 0; i < template_layers; ++i) d.push_back(template_width);
    d.push_back(1);
    return d;
  }
  std::vector<Index> deform_dims() const {
    std::vector<Index> d{3};
    for (int i = 0; i < deform_layers; ++i) d.push_back(deform_width);
    d.push_back(4);
    return d;
  }
  bool operator==(const ModelConfig&) const = default;
};

/// Sine-activated MLP: sin(omega * (W x + b)) on every layer but the last,
/// which is linear. omega is first_omega on layer 0 and hidden_omega after.
template <typename S>
struct SineMlp {
  std::vector<Matrix<S>> weights;  // out x in
  std::vector<Matrix<S>> biases;   // out x 1
  S first_omega = S(30);
  S hidden_omega = S(30);

  Index layers() const { return static_cast<Index>(weights.size()); }
  Index in_dim() const { return weights.front().cols(); }
  Index out_dim() const { return weights.back().rows(); }
  S omega(Index layer) const { return layer == 0 ? first_omega : hidden_omega; }
  Index num_params() const {
    Index n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
    return n;
  }

  /// Standard sine-network initialisation.
  static SineMlp init(const std::vector<Index>& dims, S first_omega, S hidden_omega, std::mt19937_64& rng) {
    if (dims.size() < 2) throw DimensionMismatch("SineMlp needs at least one layer");
    SineMlp m;
    m.first_omega = first_omega;
    m.hidden_omega = hidden_omega;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      const double fan_in = static_cast<double>(dims[i]);
      const double wb = i == 0 ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / static_cast<double>(hidden_omega);
      const double bb = 1.0 / std::sqrt(fan_in);
      m.weights.push_back(uniform(dims[i + 1], dims[i], wb, rng));
      m.biases.push_back(uniform(dims[i + 1], 1, bb, rng));
    }
    return m;
  }

  static Matrix<S> uniform(Index r, Index c, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix<S> m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = static_cast<S>(u(rng));
    return m;
  }
};

/// ReLU MLP, used for the per-layer Hyper-Net heads.
template <typename S>
struct ReluMlp {
  std::vector<Matrix<S>> weights;
  std::vector<Matrix<S>> biases;

  Index num_params() const {
    Index n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
    return n;
  }
};

/// Flattened Deform-Net parameters emitted by the Hyper-Net, one
/// [W (column-major), b] segment per Deform-Net layer.
template <typename S>
struct GeneratedWeights {
  Vector<S> omega;
  std::vector<std::pair<Index, Index>> shapes;  // (out, in) per layer

  Index segment_size(std::size_t layer) const { return shapes[layer].first * (shapes[layer].second + 1); }
  Index expected_size() const {
    Index n = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) n += segment_size(i);
    return n;
  }
};

template <typename S>
struct HyperNet {
  std::vector<ReluMlp<S>> heads;                // one per Deform-Net layer
  std::vector<std::pair<Index, Index>> targets;  // (out, in) of each Deform-Net layer
  Index latent_dim = 0;

  Index output_size() const {
    Index n = 0;
    for (const auto& t : targets) n += t.first * (t.second + 1);
    return n;
  }
  Index num_params() const {
    Index n = 0;
    for (const auto& h : heads) n += h.num_params();
    return n;
  }

  /// He-initialised hidden layers; the output layer is scaled by out_scale and
  /// its bias drawn from U(-1/fan_in, 1/fan_in) of the target layer, so the
  /// initial Deform-Net is small.
  static HyperNet init(const ModelConfig& cfg, std::mt19937_64& rng) {
    HyperNet h;
    h.latent_dim = cfg.latent_dim;
    const auto dd = cfg.deform_dims();
    for (std::size_t i = 0; i + 1 < dd.size(); ++i) h.targets.emplace_back(dd[i + 1], dd[i]);
    for (const auto& [out, in] : h.targets) {
      ReluMlp<S> head;
      std::vector<Index> dims{cfg.latent_dim};
      for (int l = 0; l < cfg.hyper_layers; ++l) dims.push_back(cfg.hyper_width);
      dims.push_back(out * (in + 1));
      for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const bool last = l + 2 == dims.size();
        std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(dims[l])));
        Matrix<S> w(dims[l + 1], dims[l]);
        for (Index c = 0; c < w.cols(); ++c)
          for (Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<S>(he(rng) * (last ? cfg.hyper_out_scale : 1.0));
        Matrix<S> b;
        if (last)
          b = SineMlp<S>::uniform(dims[l + 1], 1, 1.0 / static_cast<double>(in), rng);
        else
          b = Matrix<S>::Zero(dims[l + 1], 1);
        head.weights.push_back(std::move(w));
        head.biases.push_back(std::move(b));
      }
      h.heads.push_back(std::move(head));
    }
    return h;
  }
};

/// Shared networks of one model: the template field and the Hyper-Net.
template <typename S>
struct DifModel {
  ModelConfig config;
  SineMlp<S> templ;
  HyperNet<S> hyper;

  static DifModel init(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DifModel m;
    m.config = cfg;
    m.templ = SineMlp<S>::init(cfg.template_dims(), static_cast<S>(cfg.first_omega), static_cast<S>(cfg.hidden_omega), rng);
    m.hyper = HyperNet<S>::init(cfg, rng);
    return m;
  }

  /// Parameter matrices in declared order: template layers, then each head.
  std::vector<Matrix<S>*> parameters() {
    std::vector<Matrix<S>*> out;
    for (std::size_t i = 0; i < templ.weights.size(); ++i) {
      out.push_back(&templ.weights[i]);
      out.push_back(&templ.biases[i]);
    }
    for (auto& h : hyper.heads)
      for (std::size_t i = 0; i < h.weights.size(); ++i) {
        out.push_back(&h.weights[i]);
        out.push_back(&h.biases[i]);
      }
    return out;
  }
  std::vector<const Matrix<S>*> parameters() const {
    std::vector<const Matrix<S>*> out;
    for (auto* p : const_cast<DifModel*>(this)->parameters()) out.push_back(p);
    return out;
  }

  diffkit::ParamLayout layout() const {
    diffkit::ParamLayout l;
    for (std::size_t i = 0; i < templ.weights.size(); ++i) {
      l.add("T.W" + std::to_string(i), templ.weights[i].size());
      l.add("T.b" + std::to_string(i), templ.biases[i].size());
    }
    for (std::size_t h = 0; h < hyper.heads.size(); ++h)
      for (std::size_t i = 0; i < hyper.heads[h].weights.size(); ++i) {
        l.add("Psi" + std::to_string(h) + ".W" + std::to_string(i), hyper.heads[h].weights[i].size());
        l.add("Psi" + std::to_string(h) + ".b" + std::to_string(i), hyper.heads[h].biases[i].size());
      }
    return l;
  }

  Index template_param_count() const { return templ.num_params(); }
  Index num_params() const { return templ.num_params() + hyper.num_params(); }

  Vector<S> flatten() const {
    Vector<S> v(num_params());
    Index off = 0;
    for (const auto* p : parameters()) {
      v.segment(off, p->size()) = Eigen::Map<const Vector<S>>(p->data(), p->size());
      off += p->size();
    }
    return v;
  }

  void unflatten(const Eigen::Ref<const Vector<S>>& v) {
    if (v.size() != num_params()) throw DimensionMismatch("unflatten: parameter count mismatch");
    Index off = 0;
    for (auto* p : parameters()) {
      Eigen::Map<Vector<S>>(p->data(), p->size()) = v.segment(off, p->size());
      off += p->size();
    }
  }

  template <typename T>
  DifModel<T> cast() const {
    DifModel<T> out;
    out.config = config;
    out.templ.first_omega = static_cast<T>(templ.first_omega);
    out.templ.hidden_omega = static_cast<T>(templ.hidden_omega);
    for (std::size_t i = 0; i < templ.weights.size(); ++i) {
      out.templ.weights.push_back(templ.weights[i].template cast<T>());
      out.templ.biases.push_back(templ.biases[i].template cast<T>());
    }
    out.hyper.targets = hyper.targets;
    out.hyper.latent_dim = hyper.latent_dim;
    for (const auto& h : hyper.heads) {
      ReluMlp<T> hh;
      for (std::size_t i = 0; i < h.weights.size(); ++i) {
        hh.weights.push_back(h.weights[i].template cast<T>());
        hh.biases.push_back(h.biases[i].template cast<T>());
      }
      out.hyper.heads.push_back(std::move(hh));
    }
    return out;
  }
};

// ---- tape binding -----------------------------------------------------------

template <typename S>
struct BoundLayer {
  Var<S> weight;
  Var<S> bias;
};

template <typename S>
struct BoundSine {
  std::vector<BoundLayer<S>> layers;
  S first_omega = S(30);
  S hidden_omega = S(30);
};

template <typename S>
struct BoundHyper {
  std::vector<std::vector<BoundLayer<S>>> heads;
  std::vector<std::pair<Index, Index>> targets;
};

/// Binds parameters by reference (trainable -> param leaves, else constants).
template <typename S>
BoundSine<S> bind(Tape<S>& tape, const SineMlp<S>& m, bool trainable) {
  BoundSine<S> b;
  b.first_omega = m.first_omega;
  b.hidden_omega = m.hidden_omega;
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    if (trainable)
      b.layers.push_back({tape.param_ref(m.weights[i]), tape.param_ref(m.biases[i])});
    else
      b.layers.push_back({tape.constant_ref(m.weights[i]), tape.constant_ref(m.biases[i])});
  }
  return b;
}

template <typename S>
BoundHyper<S> bind(Tape<S>& tape, const HyperNet<S>& h, bool trainable) {
  BoundHyper<S> b;
  b.targets = h.targets;
  for (const auto& head : h.heads) {
    std::vector<BoundLayer<S>> layers;
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
      if (trainable)
        layers.push_back({tape.param_ref(head.weights[i]), tape.param_ref(head.biases[i])});
      else
        layers.push_back({tape.constant_ref(head.weights[i]), tape.constant_ref(head.biases[i])});
    }
    b.heads.push_back(std::move(layers));
  }
  return b;
}

template <typename S>
Var<S> forward(const BoundSine<S>& net, Var<S> x) {
  const std::size_t n = net.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    x = diffkit::affine(net.layers[i].weight, net.layers[i].bias, x);
    if (i + 1 < n) x = diffkit::sine(x, i == 0 ? net.first_omega : net.hidden_omega);
  }
  return x;
}

/// Per-head Hyper-Net outputs, bound as Deform-Net layers.
template <typename S>
BoundSine<S> hyper_forward(const BoundHyper<S>& psi, Var<S> alpha, S first_omega, S hidden_omega) {
  if (alpha.is_dual() || alpha.value().cols() != 1) throw DimensionMismatch("hyper_forward: alpha must be a k x 1 plain node");
  if (!psi.heads.empty() && psi.heads.front().front().weight.value().cols() != alpha.rows())
    throw DimensionMismatch("hyper_forward: latent code has " + std::to_string(alpha.rows()) + " entries, Hyper-Net expects " +
                            std::to_string(psi.heads.front().front().weight.value().cols()));
  Tape<S>& tape = alpha.tape();
  BoundSine<S> deform;
  deform.first_omega = first_omega;
  deform.hidden_omega = hidden_omega;
  for (std::size_t h = 0; h < psi.heads.size(); ++h) {
    Var<S> x = alpha;
    const auto& layers = psi.heads[h];
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = diffkit::affine(layers[i].weight, layers[i].bias, x);
      if (i + 1 < layers.size()) x = diffkit::relu(x);
    }
    const auto [out, in] = psi.targets[h];
    deform.layers.push_back({tape.reshape(x, 0, out, in), tape.reshape(x, out * in, out, 1)});
  }
  return deform;
}

// ---- plain evaluation API ---------------------------------------------------

template <typename S>
struct FieldEval {
  S s = S(0);
  Vec3<S> grad = Vec3<S>::Zero();
};

template <typename S>
struct DeformOut {
  Vec3<S> v = Vec3<S>::Zero();
  S delta_s = S(0);
};

template <typename S>
struct DeformEval {
  DeformOut<S> out;
  Eigen::Matrix<S, 4, 3> jacobian = Eigen::Matrix<S, 4, 3>::Zero();
};

/// omega = Psi(alpha).
template <typename S>
GeneratedWeights<S> hyper_forward(const HyperNet<S>& psi, const Vector<S>& alpha) {
  if (alpha.size() != psi.latent_dim)
    throw DimensionMismatch("hyper_forward: latent code has " + std::to_string(alpha.size()) + " entries, expected " +
                            std::to_string(psi.latent_dim));
  GeneratedWeights<S> g;
  g.shapes = psi.targets;
  g.omega.resize(psi.output_size());
  Index off = 0;
  for (const auto& head : psi.heads) {
    Matrix<S> x = alpha;
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
      Matrix<S> y = head.weights[i] * x;
      y += head.biases[i];
      x = i + 1 < head.weights.size() ? Matrix<S>(y.cwiseMax(S(0))) : y;
    }
    g.omega.segment(off, x.size()) = Eigen::Map<const Vector<S>>(x.data(), x.size());
    off += x.size();
  }
  return g;
}

/// Unflattens generated weights into a Deform-Net.
template <typename S>
SineMlp<S> deform_net(const GeneratedWeights<S>& g, S first_omega, S hidden_omega) {
  if (g.omega.size() != g.expected_size())
    throw DimensionMismatch("generated weights have " + std::to_string(g.omega.size()) + " entries, architecture needs " +
                            std::to_string(g.expected_size()));
  SineMlp<S> m;
  m.first_omega = first_omega;
  m.hidden_omega = hidden_omega;
  Index off = 0;
  for (const auto& [out, in] : g.shapes) {
    m.weights.push_back(Eigen::Map<const Matrix<S>>(g.omega.data() + off, out, in));
    m.biases.push_back(Eigen::Map<const Matrix<S>>(g.omega.data() + off + out * in, out, 1));
    off += out * (in + 1);
  }
  return m;
}

template <typename S>
SineMlp<S> deform_net(const DifModel<S>& model, const Vector<S>& alpha) {
  return deform_net(hyper_forward(model.hyper, alpha), model.templ.first_omega, model.templ.hidden_omega);
}

template <typename S>
FieldEval<S> template_eval(const SineMlp<S>& T, const Vec3<S>& p) {
  if (!p.allFinite()) throw std::invalid_argument("template_eval: non-finite point");
  Tape<S> tape;
  auto bound = bind(tape, T, false);
  Var<S> y = forward(bound, tape.dual_input(Matrix<S>(p)));
  FieldEval<S> f;
  f.s = y.value()(0, 0);
  for (int d = 0; d < 3; ++d) f.grad(d) = y.value()(0, d + 1);
  return f;
}

template <typename S>
DeformEval<S> deform_eval(const SineMlp<S>& deform, const Vec3<S>& p) {
  if (deform.out_dim() != 4 || deform.in_dim() != 3) throw DimensionMismatch("deform_eval: Deform-Net must map R^3 -> R^4");
  Tape<S> tape;
  auto bound = bind(tape, deform, false);
  Var<S> y = forward(bound, tape.dual_input(Matrix<S>(p)));
  DeformEval<S> e;
  const auto& Y = y.value();
  e.out.v = Y.col(0).template head<3>();
  e.out.delta_s = Y(3, 0);
  for (int d = 0; d < 3; ++d) e.jacobian.col(d) = Y.col(d + 1);
  return e;
}

template <typename S>
DeformEval<S> deform_eval(const GeneratedWeights<S>& g, const Vec3<S>& p, S first_omega = S(30), S hidden_omega = S(30)) {
  return deform_eval(deform_net(g, first_omega, hidden_omega), p);
}

// ---- composed field on a tape -----------------------------------------------

/// Everything the losses need about one shape's field over a batch of points.
template <typename S>
struct DifTrace {
  Var<S> s;              // 1 x N
  Var<S> grad;           // 3 x N, spatial gradient of s
  Var<S> grad_template;  // 3 x N, grad T evaluated at p + v
  Var<S> deform;         // 4 x 4N dual output of the Deform-Net
  Index points = 0;
};

/// Builds s = T(p + v) + delta_s over the columns of `points` with
/// grad s = (I + J_v)^T grad T(p + v) + grad delta_s.
template <typename S>
DifTrace<S> trace_dif(const BoundSine<S>& templ, const BoundSine<S>& deform, Var<S> p, bool use_correction) {
  Tape<S>& tape = p.tape();
  DifTrace<S> tr;
  tr.points = p.points();
  tr.deform = forward(deform, p);
  Var<S> v = tape.slice_rows(tr.deform, 0, 3);
  Var<S> q = tape.reseed(tape.add(p, v));
  Var<S> t = forward(templ, q);
  tr.grad_template = tape.grad_of(t);
  Var<S> grad = tr.grad_template;
  for (int d = 0; d < 3; ++d)
    grad = tape.add(grad, tape.mul(tape.grad_of(tr.deform, d), tape.slice_rows(tr.grad_template, d, 1)));
  Var<S> s = tape.value_of(t);
  if (use_correction) {
    s = tape.add(s, tape.value_of(tape.slice_rows(tr.deform, 3, 1)));
    grad = tape.add(grad, tape.grad_of(tr.deform, 3));
  }
  tr.s = s;
  tr.grad = grad;
  return tr;
}

template <typename S>
FieldEval<S> dif_eval(const SineMlp<S>& T, const HyperNet<S>& psi, const Vector<S>& alpha, const Vec3<S>& p,
                      bool use_correction = true) {
  const auto deform = deform_net(hyper_forward(psi, alpha), T.first_omega, T.hidden_omega);
  Tape<S> tape;
  auto bt = bind(tape, T, false);
  auto bd = bind(tape, deform, false);
  auto tr = trace_dif(bt, bd, tape.dual_input(Matrix<S>(p)), use_correction);
  FieldEval<S> f;
  f.s = tr.s.value()(0, 0);
  f.grad = tr.grad.value().col(0);
  return f;
}

template <typename S>
FieldEval<S> dif_eval(const DifModel<S>& model, const Vector<S>& alpha, const Vec3<S>& p) {
  return dif_eval(model.templ, model.hyper, alpha, p, model.config.use_correction);
}

// ---- batched inference --------------------------------------------------------

template <typename S>
struct FieldBatch {
  Vector<S> s;             // N
  Matrix<S> grad;          // 3 x N (empty unless requested)
  Matrix<S> v;             // 3 x N
  Vector<S> delta_s;       // N
  Matrix<S> grad_template; // 3 x N (empty unless requested)
};

/// Evaluates the composed field for a fixed Deform-Net over many points,
/// in chunks so memory stays bounded.
template <typename S>
FieldBatch<S> evaluate_field(const SineMlp<S>& T, const SineMlp<S>& deform, const Matrix<S>& points, bool use_correction,
                             bool with_grad, Index chunk = 8192) {
  const Index n = points.cols();
  FieldBatch<S> out;
  out.s.resize(n);
  out.v.resize(3, n);
  out.delta_s.resize(n);
  if (with_grad) {
    out.grad.resize(3, n);
    out.grad_template.resize(3, n);
  }
  for (Index c0 = 0; c0 < n; c0 += chunk) {
    const Index m = std::min(chunk, n - c0);
    Tape<S> tape;
    auto bt = bind(tape, T, false);
    auto bd = bind(tape, deform, false);
    const Matrix<S> block = points.middleCols(c0, m);
    if (with_grad) {
      auto tr = trace_dif(bt, bd, tape.dual_input(block), use_correction);
      out.s.segment(c0, m) = tr.s.value().row(0).transpose();
      out.grad.middleCols(c0, m) = tr.grad.value();
      out.grad_template.middleCols(c0, m) = tr.grad_template.value();
      out.v.middleCols(c0, m) = tr.deform.value().topRows(3).leftCols(m);
      out.delta_s.segment(c0, m) = tr.deform.value().row(3).head(m).transpose();
    } else {
      Var<S> p = tape.constant(block);
      Var<S> d = forward(bd, p);
      Var<S> t = forward(bt, tape.add(p, tape.slice_rows(d, 0, 3)));
      Var<S> s = use_correction ? tape.add(t, tape.slice_rows(d, 3, 1)) : t;
      out.s.segment(c0, m) = s.value().row(0).transpose();
      out.v.middleCols(c0, m) = d.value().topRows(3);
      out.delta_s.segment(c0, m) = d.value().row(3).transpose();
    }
  }
  return out;
}

/// Template-field values at a batch of points (no gradients).
template <typename S>
Vector<S> evaluate_template(const SineMlp<S>& T, const Matrix<S>& points, Index chunk = 16384) {
  Vector<S> out(points.cols());
  for (Index c0 = 0; c0 < points.cols(); c0 += chunk) {
    const Index m = std::min(chunk, points.cols() - c0);
    Tape<S> tape;
    auto bt = bind(tape, T, false);
    out.segment(c0, m) = forward(bt, tape.constant(Matrix<S>(points.middleCols(c0, m)))).value().row(0).transpose();
  }
  return out;
}

}  // namespace dif::nets
