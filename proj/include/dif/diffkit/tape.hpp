#pragma once

// Reverse-mode tape over batched matrices with optional 3-tangent dual layout.
//
// A node is either "plain" (an R x C matrix) or "dual" over N points, in which
// case its value is an R x 4N matrix laid out as [value | d/dx | d/dy | d/dz],
// one column per point in each block. Dual-aware primitives propagate the
// three spatial tangents forward; backward() then differentiates through
// both the values and the tangents, so losses built from spatial gradients
// still yield exact weight gradients.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dif::diffkit {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

/// Thrown when a primitive is applied to operands it has no derivative rule for.
class UnsupportedOp : public std::logic_error {
 public:
  UnsupportedOp(const std::string& op, const std::string& why)
      : std::logic_error("unsupported op: " + op + " (" + why + ")"), op_(op) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Op : std::uint8_t {
  kConstant,
  kParam,
  kInput,
  kAffine,
  kSine,
  kRelu,
  kAdd,
  kSub,
  kMul,
  kScale,
  kExp,
  kLog,
  kAbs,
  kSumRows,
  kNorm,
  kInner,
  kSliceRows,
  kSliceCols,
  kSumAll,
  kMeanAll,
  kValue,
  kGrad,
  kReseed,
  kReshape,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParam: return "param";
    case Op::kInput: return "input";
    case Op::kAffine: return "affine";
    case Op::kSine: return "sine";
    case Op::kRelu: return "relu";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kAbs: return "abs";
    case Op::kSumRows: return "sum_rows";
    case Op::kNorm: return "norm";
    case Op::kInner: return "inner";
    case Op::kSliceRows: return "slice_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSumAll: return "sum_all";
    case Op::kMeanAll: return "mean_all";
    case Op::kValue: return "value";
    case Op::kGrad: return "grad";
    case Op::kReseed: return "reseed";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

template <typename S>
class Tape;

/// Handle to a tape node.
template <typename S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

  Tape<S>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix<S>& value() const { return tape_->value(id_); }
  const Matrix<S>& grad() const { return tape_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index points() const { return tape_->points(id_); }
  bool is_dual() const { return points() > 0; }
  S scalar() const { return value()(0, 0); }

 private:
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

template <typename S>
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ---------------------------------------------------------------

  Var<S> constant(Matrix<S> m) { return leaf(Op::kConstant, std::move(m), nullptr, false); }
  /// Constant referring to caller-owned storage; it must outlive the tape.
  Var<S> constant_ref(const Matrix<S>& m) { return leaf(Op::kConstant, {}, &m, false); }
  Var<S> param(Matrix<S> m) { return register_param(leaf(Op::kParam, std::move(m), nullptr, true)); }
  /// Parameter referring to caller-owned storage; it must outlive the tape.
  Var<S> param_ref(const Matrix<S>& m) { return register_param(leaf(Op::kParam, {}, &m, true)); }

  /// Dual input over N points (3 x N); tangents are seeded with the identity.
  Var<S> dual_input(const Matrix<S>& points) {
    if (points.rows() != 3) throw ShapeError("dual_input expects 3 x N points");
    const Index n = points.cols();
    Node node;
    node.op = Op::kInput;
    node.points = n;
    node.own = Matrix<S>::Zero(3, 4 * n);
    node.own.leftCols(n) = points;
    for (int d = 0; d < 3; ++d) node.own.block(d, (d + 1) * n, 1, n).setOnes();
    return push(std::move(node));
  }

  // ---- accessors ------------------------------------------------------------

  const Matrix<S>& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.own;
  }
  const Matrix<S>& grad(int id) const { return nodes_[id].grad; }
  Index points(int id) const { return nodes_[id].points; }
  Op op(int id) const { return nodes_[id].op; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<int>& params() const { return params_; }

  // ---- primitives -----------------------------------------------------------

  /// y = W x + b. For a dual x the bias only enters the value block.
  Var<S> affine(Var<S> w, Var<S> b, Var<S> x) {
    check_plain(w, Op::kAffine, "weight");
    check_plain(b, Op::kAffine, "bias");
    const auto& W = w.value();
    const auto& B = b.value();
    const auto& X = x.value();
    if (W.cols() != X.rows() || B.rows() != W.rows() || B.cols() != 1)
      throw ShapeError("affine: W " + dims(W) + ", b " + dims(B) + ", x " + dims(X));
    Node node = derived(Op::kAffine, {w, b, x});
    const Index n = x.points();
    node.points = n;
    if (n > 0) {
      node.own.resize(W.rows(), 4 * n);
      node.own.leftCols(n).noalias() = W * X.leftCols(n);
      node.own.leftCols(n).colwise() += B.col(0);
      node.own.rightCols(3 * n).noalias() = W * X.rightCols(3 * n);
    } else {
      node.own.noalias() = W * X;
      node.own.colwise() += B.col(0);
    }
    return push(std::move(node));
  }

  /// y = sin(freq * x)
  Var<S> sine(Var<S> x, S freq = S(1)) {
    Node node = derived(Op::kSine, {x});
    node.s0 = freq;
    const auto& X = x.value();
    const Index n = x.points();
    node.points = n;
    if (n > 0) {
      auto v = X.leftCols(n).array() * freq;
      node.aux = v.cos().matrix();
      node.own.resize(X.rows(), 4 * n);
      node.own.leftCols(n) = v.sin().matrix();
      for (int d = 1; d <= 3; ++d)
        node.own.middleCols(d * n, n) =
            (node.aux.array() * X.middleCols(d * n, n).array() * freq).matrix();
    } else {
      auto v = X.array() * freq;
      node.aux = v.cos().matrix();
      node.own = v.sin().matrix();
    }
    return push(std::move(node));
  }

  Var<S> relu(Var<S> x) {
    Node node = derived(Op::kRelu, {x});
    const auto& X = x.value();
    const Index n = x.points();
    node.points = n;
    const Index vc = n > 0 ? n : X.cols();
    node.aux = (X.leftCols(vc).array() > S(0)).template cast<S>().matrix();
    node.own.resize(X.rows(), X.cols());
    node.own.leftCols(vc) = X.leftCols(vc).cwiseMax(S(0));
    if (n > 0)
      for (int d = 1; d <= 3; ++d)
        node.own.middleCols(d * n, n) = (node.aux.array() * X.middleCols(d * n, n).array()).matrix();
    return push(std::move(node));
  }

  Var<S> add(Var<S> a, Var<S> b) { return linear2(Op::kAdd, a, b, S(1)); }
  Var<S> sub(Var<S> a, Var<S> b) { return linear2(Op::kSub, a, b, S(-1)); }

  /// Elementwise product. Plain operands may broadcast a single row.
  Var<S> mul(Var<S> a, Var<S> b) {
    const auto& A = a.value();
    const auto& B = b.value();
    Node node = derived(Op::kMul, {a, b});
    if (a.is_dual() || b.is_dual()) {
      if (a.points() != b.points() || A.rows() != B.rows())
        throw UnsupportedOp("mul", "dual operands must share layout");
      const Index n = a.points();
      node.points = n;
      node.own.resize(A.rows(), 4 * n);
      const auto av = A.leftCols(n).array();
      const auto bv = B.leftCols(n).array();
      node.own.leftCols(n) = (av * bv).matrix();
      for (int d = 1; d <= 3; ++d)
        node.own.middleCols(d * n, n) =
            (av * B.middleCols(d * n, n).array() + bv * A.middleCols(d * n, n).array()).matrix();
      return push(std::move(node));
    }
    if (A.cols() != B.cols() || (A.rows() != B.rows() && A.rows() != 1 && B.rows() != 1))
      throw ShapeError("mul: " + dims(A) + " vs " + dims(B));
    node.own = broadcast_mul(A, B);
    return push(std::move(node));
  }

  /// y = a * x + c; the offset only enters the value block of a dual.
  Var<S> scale(Var<S> x, S a, S c = S(0)) {
    Node node = derived(Op::kScale, {x});
    node.s0 = a;
    node.s1 = c;
    node.points = x.points();
    node.own = x.value() * a;
    const Index vc = node.points > 0 ? node.points : node.own.cols();
    node.own.leftCols(vc).array() += c;
    return push(std::move(node));
  }

  Var<S> exp(Var<S> x) {
    Node node = derived(Op::kExp, {x});
    const auto& X = x.value();
    const Index n = x.points();
    node.points = n;
    const Index vc = n > 0 ? n : X.cols();
    node.own.resize(X.rows(), X.cols());
    node.own.leftCols(vc) = X.leftCols(vc).array().exp().matrix();
    for (int d = 1; n > 0 && d <= 3; ++d)
      node.own.middleCols(d * n, n) =
          (node.own.leftCols(n).array() * X.middleCols(d * n, n).array()).matrix();
    return push(std::move(node));
  }

  Var<S> log(Var<S> x) {
    Node node = derived(Op::kLog, {x});
    const auto& X = x.value();
    const Index n = x.points();
    node.points = n;
    const Index vc = n > 0 ? n : X.cols();
    node.own.resize(X.rows(), X.cols());
    node.own.leftCols(vc) = X.leftCols(vc).array().log().matrix();
    for (int d = 1; n > 0 && d <= 3; ++d)
      node.own.middleCols(d * n, n) = (X.middleCols(d * n, n).array() / X.leftCols(n).array()).matrix();
    return push(std::move(node));
  }

  Var<S> abs(Var<S> x) {
    Node node = derived(Op::kAbs, {x});
    const auto& X = x.value();
    const Index n = x.points();
    node.points = n;
    const Index vc = n > 0 ? n : X.cols();
    node.aux = X.leftCols(vc).unaryExpr([](S v) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
    node.own.resize(X.rows(), X.cols());
    node.own.leftCols(vc) = X.leftCols(vc).cwiseAbs();
    for (int d = 1; n > 0 && d <= 3; ++d)
      node.own.middleCols(d * n, n) = (node.aux.array() * X.middleCols(d * n, n).array()).matrix();
    return push(std::move(node));
  }

  /// Column sums: R x C -> 1 x C (each dual block summed independently).
  Var<S> sum_rows(Var<S> x) {
    Node node = derived(Op::kSumRows, {x});
    node.points = x.points();
    node.own = x.value().colwise().sum();
    return push(std::move(node));
  }

  /// Column-wise Euclidean norm over rows: R x C -> 1 x C.
  Var<S> norm(Var<S> x) {
    Node node = derived(Op::kNorm, {x});
    const auto& X = x.value();
    const Index n = x.points();
    node.points = n;
    if (n > 0) {
      node.own.resize(1, 4 * n);
      node.own.leftCols(n) = X.leftCols(n).colwise().norm();
      for (int d = 1; d <= 3; ++d) {
        auto dot = (X.leftCols(n).array() * X.middleCols(d * n, n).array()).colwise().sum();
        node.own.middleCols(d * n, n) = (dot / safe(node.own.leftCols(n).array())).matrix();
      }
    } else {
      node.own = X.colwise().norm();
    }
    return push(std::move(node));
  }

  /// Column-wise inner product over rows: (R x C, R x C) -> 1 x C.
  Var<S> inner(Var<S> a, Var<S> b) {
    const auto& A = a.value();
    const auto& B = b.value();
    if (a.points() != b.points() || A.rows() != B.rows() || A.cols() != B.cols())
      throw UnsupportedOp("inner", "operands must share layout: " + dims(A) + " vs " + dims(B));
    Node node = derived(Op::kInner, {a, b});
    const Index n = a.points();
    node.points = n;
    if (n > 0) {
      node.own.resize(1, 4 * n);
      node.own.leftCols(n) = (A.leftCols(n).array() * B.leftCols(n).array()).colwise().sum();
      for (int d = 1; d <= 3; ++d)
        node.own.middleCols(d * n, n) =
            (A.leftCols(n).array() * B.middleCols(d * n, n).array() +
             B.leftCols(n).array() * A.middleCols(d * n, n).array())
                .colwise()
                .sum();
    } else {
      node.own = (A.array() * B.array()).colwise().sum();
    }
    return push(std::move(node));
  }

  Var<S> slice_rows(Var<S> x, Index row0, Index count) {
    const auto& X = x.value();
    if (row0 < 0 || count < 0 || row0 + count > X.rows()) throw ShapeError("slice_rows out of range");
    Node node = derived(Op::kSliceRows, {x});
    node.points = x.points();
    node.i0 = row0;
    node.i1 = count;
    node.own = X.middleRows(row0, count);
    return push(std::move(node));
  }

  Var<S> slice_cols(Var<S> x, Index col0, Index count) {
    check_plain(x, Op::kSliceCols, "operand");
    const auto& X = x.value();
    if (col0 < 0 || count < 0 || col0 + count > X.cols()) throw ShapeError("slice_cols out of range");
    Node node = derived(Op::kSliceCols, {x});
    node.i0 = col0;
    node.i1 = count;
    node.own = X.middleCols(col0, count);
    return push(std::move(node));
  }

  Var<S> sum_all(Var<S> x) {
    check_plain(x, Op::kSumAll, "operand");
    Node node = derived(Op::kSumAll, {x});
    node.own = Matrix<S>::Constant(1, 1, x.value().sum());
    return push(std::move(node));
  }

  Var<S> mean_all(Var<S> x) {
    check_plain(x, Op::kMeanAll, "operand");
    if (x.value().size() == 0) throw ShapeError("mean_all of empty matrix");
    Node node = derived(Op::kMeanAll, {x});
    node.own = Matrix<S>::Constant(1, 1, x.value().mean());
    return push(std::move(node));
  }

  /// Value block of a dual as a plain R x N matrix.
  Var<S> value_of(Var<S> x) {
    if (!x.is_dual()) throw UnsupportedOp("value", "operand is not dual");
    Node node = derived(Op::kValue, {x});
    node.own = x.value().leftCols(x.points());
    return push(std::move(node));
  }

  /// Spatial gradient of row `row` of a dual, as a plain 3 x N matrix.
  Var<S> grad_of(Var<S> x, Index row = 0) {
    if (!x.is_dual()) throw UnsupportedOp("grad", "operand is not dual");
    const Index n = x.points();
    Node node = derived(Op::kGrad, {x});
    node.i0 = row;
    node.own.resize(3, n);
    for (int d = 0; d < 3; ++d) node.own.row(d) = x.value().block(row, (d + 1) * n, 1, n);
    return push(std::move(node));
  }

  /// Fresh dual at the value of a 3-row operand, tangents re-seeded with the
  /// identity. Gradients flow back through the value only.
  Var<S> reseed(Var<S> x) {
    if (x.rows() != 3) throw ShapeError("reseed expects 3 rows");
    const Index n = x.is_dual() ? x.points() : x.value().cols();
    Node node = derived(Op::kReseed, {x});
    node.points = n;
    node.own = Matrix<S>::Zero(3, 4 * n);
    node.own.leftCols(n) = x.value().leftCols(n);
    for (int d = 0; d < 3; ++d) node.own.block(d, (d + 1) * n, 1, n).setOnes();
    return push(std::move(node));
  }

  /// Reinterprets elements [offset, offset + rows*cols) of a plain column
  /// vector as a column-major rows x cols matrix.
  Var<S> reshape(Var<S> x, Index offset, Index rows, Index cols) {
    check_plain(x, Op::kReshape, "operand");
    const auto& X = x.value();
    if (X.cols() != 1 || offset < 0 || offset + rows * cols > X.rows())
      throw ShapeError("reshape out of range");
    Node node = derived(Op::kReshape, {x});
    node.i0 = offset;
    node.own = Eigen::Map<const Matrix<S>>(X.data() + offset, rows, cols);
    return push(std::move(node));
  }

  // ---- reverse sweep --------------------------------------------------------

  /// Accumulates d(loss)/d(node) into every node that requires a gradient.
  void backward(Var<S> loss) {
    const auto& L = loss.value();
    if (loss.is_dual() || L.rows() != 1 || L.cols() != 1) throw ShapeError("backward: loss must be a 1 x 1 plain node, got " + dims(L));
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Matrix<S>::Ones(1, 1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& node = nodes_[id];
      if (!node.requires_grad || node.grad.size() == 0) continue;
      backward_node(id);
    }
  }

  /// Gradient of a registered parameter (zeros when disconnected from the loss).
  Matrix<S> gradient(Var<S> p) const {
    const Node& n = nodes_[p.id()];
    if (n.grad.size() == 0) return Matrix<S>::Zero(value(p.id()).rows(), value(p.id()).cols());
    return n.grad;
  }

  /// All parameter gradients concatenated (column-major) in registration order.
  Vector<S> gradient_vector() const {
    Index total = 0;
    for (int id : params_) total += value(id).size();
    Vector<S> out(total);
    Index off = 0;
    for (int id : params_) {
      const Index sz = value(id).size();
      if (nodes_[id].grad.size() == 0)
        out.segment(off, sz).setZero();
      else
        out.segment(off, sz) = Eigen::Map<const Vector<S>>(nodes_[id].grad.data(), sz);
      off += sz;
    }
    return out;
  }

 private:
  struct Node {
    Op op = Op::kConstant;
    std::array<int, 3> in{-1, -1, -1};
    Matrix<S> own;
    const Matrix<S>* external = nullptr;
    Matrix<S> aux;
    Matrix<S> grad;
    Index points = 0;
    S s0 = 0, s1 = 0;
    Index i0 = 0, i1 = 0;
    bool requires_grad = false;
  };

  static std::string dims(const Matrix<S>& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  template <typename D>
  static auto safe(const Eigen::ArrayBase<D>& a) {
    return a.unaryExpr([](S v) { return v == S(0) ? S(1) : v; });
  }

  static Matrix<S> broadcast_mul(const Matrix<S>& A, const Matrix<S>& B) {
    if (A.rows() == B.rows()) return (A.array() * B.array()).matrix();
    if (A.rows() == 1) return (B.array().rowwise() * A.row(0).array()).matrix();
    return (A.array().rowwise() * B.row(0).array()).matrix();
  }

  void check_plain(Var<S> x, Op op, const char* what) const {
    if (x.is_dual()) throw UnsupportedOp(op_name(op), std::string(what) + " must be plain");
  }

  Var<S> leaf(Op op, Matrix<S> m, const Matrix<S>* ext, bool req) {
    Node node;
    node.op = op;
    node.own = std::move(m);
    node.external = ext;
    node.requires_grad = req;
    return push(std::move(node));
  }

  Var<S> register_param(Var<S> v) {
    params_.push_back(v.id());
    return v;
  }

  Node derived(Op op, std::initializer_list<Var<S>> inputs) {
    Node node;
    node.op = op;
    int i = 0;
    for (const auto& v : inputs) {
      if (&v.tape() != this) throw std::logic_error("operand belongs to another tape");
      node.in[i++] = v.id();
      node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
    }
    return node;
  }

  Var<S> push(Node&& node) {
    nodes_.push_back(std::move(node));
    return Var<S>(this, static_cast<int>(nodes_.size() - 1));
  }

  Var<S> linear2(Op op, Var<S> a, Var<S> b, S sign) {
    const auto& A = a.value();
    const auto& B = b.value();
    if (a.points() != b.points()) throw UnsupportedOp(op_name(op), "mixed dual/plain operands");
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeError(std::string(op_name(op)) + ": " + dims(A) + " vs " + dims(B));
    Node node = derived(op, {a, b});
    node.points = a.points();
    node.own = sign > 0 ? Matrix<S>(A + B) : Matrix<S>(A - B);
    return push(std::move(node));
  }

  // Accumulate g into the gradient of node `id` (if it wants one).
  template <typename G>
  void acc(int id, const G& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Gradient buffer of `id`, zero-initialised to its value shape.
  Matrix<S>& grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix<S>::Zero(value(id).rows(), value(id).cols());
    return n.grad;
  }

  bool wants(int id) const { return nodes_[id].requires_grad; }

  void backward_node(int id);

  std::vector<Node> nodes_;
  std::vector<int> params_;
};

template <typename S>
void Tape<S>::backward_node(int id) {
  // Copy out what we need: acc() may touch other nodes but never reallocates.
  const Node& node = nodes_[id];
  const Matrix<S>& gy = node.grad;
  const Index n = node.points;
  const int a = node.in[0], b = node.in[1], c = node.in[2];

  switch (node.op) {
    case Op::kConstant:
    case Op::kParam:
    case Op::kInput:
      break;

    case Op::kAffine: {
      const auto& W = value(a);
      const auto& X = value(c);
      if (wants(a)) {
        Matrix<S>& gw = grad_buffer(a);
        gw.noalias() += gy * X.transpose();
      }
      if (wants(b)) {
        Matrix<S>& gb = grad_buffer(b);
        gb += (n > 0 ? gy.leftCols(n) : gy.leftCols(gy.cols())).rowwise().sum();
      }
      if (wants(c)) {
        Matrix<S>& gx = grad_buffer(c);
        gx.noalias() += W.transpose() * gy;
      }
      break;
    }

    case Op::kSine: {
      if (!wants(a)) break;
      const S w = node.s0;
      const auto& X = value(a);
      Matrix<S>& gx = grad_buffer(a);
      if (n > 0) {
        auto cosv = node.aux.array();
        auto sinv = node.own.leftCols(n).array();
        Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> mix =
            X.middleCols(n, n).array() * gy.middleCols(n, n).array();
        for (int d = 2; d <= 3; ++d) mix += X.middleCols(d * n, n).array() * gy.middleCols(d * n, n).array();
        gx.leftCols(n).array() += w * cosv * gy.leftCols(n).array() - (w * w) * sinv * mix;
        for (int d = 1; d <= 3; ++d) gx.middleCols(d * n, n).array() += w * cosv * gy.middleCols(d * n, n).array();
      } else {
        gx.array() += w * node.aux.array() * gy.array();
      }
      break;
    }

    case Op::kRelu: {
      if (!wants(a)) break;
      Matrix<S>& gx = grad_buffer(a);
      const Index vc = n > 0 ? n : gy.cols();
      gx.leftCols(vc).array() += node.aux.array() * gy.leftCols(vc).array();
      for (int d = 1; n > 0 && d <= 3; ++d) gx.middleCols(d * n, n).array() += node.aux.array() * gy.middleCols(d * n, n).array();
      break;
    }

    case Op::kAdd:
      acc(a, gy);
      acc(b, gy);
      break;

    case Op::kSub:
      acc(a, gy);
      if (wants(b)) grad_buffer(b) -= gy;
      break;

    case Op::kMul: {
      const auto& A = value(a);
      const auto& B = value(b);
      if (n > 0) {
        for (int side = 0; side < 2; ++side) {
          const int self = side == 0 ? a : b;
          if (!wants(self)) continue;
          const auto& other = side == 0 ? B : A;
          Matrix<S>& g = grad_buffer(self);
          g.leftCols(n).array() += other.leftCols(n).array() * gy.leftCols(n).array();
          for (int d = 1; d <= 3; ++d) {
            g.leftCols(n).array() += other.middleCols(d * n, n).array() * gy.middleCols(d * n, n).array();
            g.middleCols(d * n, n).array() += other.leftCols(n).array() * gy.middleCols(d * n, n).array();
          }
        }
      } else {
        for (int side = 0; side < 2; ++side) {
          const int self = side == 0 ? a : b;
          if (!wants(self)) continue;
          const auto& mine = side == 0 ? A : B;
          const auto& other = side == 0 ? B : A;
          Matrix<S> full = broadcast_mul(gy, other);
          if (mine.rows() == 1 && full.rows() != 1)
            grad_buffer(self) += full.colwise().sum();
          else
            grad_buffer(self) += full;
        }
      }
      break;
    }

    case Op::kScale:
      if (wants(a)) grad_buffer(a) += node.s0 * gy;
      break;

    case Op::kExp: {
      if (!wants(a)) break;
      const auto& X = value(a);
      Matrix<S>& gx = grad_buffer(a);
      const Index vc = n > 0 ? n : gy.cols();
      auto e = node.own.leftCols(vc).array();
      gx.leftCols(vc).array() += e * gy.leftCols(vc).array();
      for (int d = 1; n > 0 && d <= 3; ++d) {
        gx.leftCols(n).array() += e * X.middleCols(d * n, n).array() * gy.middleCols(d * n, n).array();
        gx.middleCols(d * n, n).array() += e * gy.middleCols(d * n, n).array();
      }
      break;
    }

    case Op::kLog: {
      if (!wants(a)) break;
      const auto& X = value(a);
      Matrix<S>& gx = grad_buffer(a);
      const Index vc = n > 0 ? n : gy.cols();
      auto v = X.leftCols(vc).array();
      gx.leftCols(vc).array() += gy.leftCols(vc).array() / v;
      for (int d = 1; n > 0 && d <= 3; ++d) {
        gx.leftCols(n).array() -= X.middleCols(d * n, n).array() * gy.middleCols(d * n, n).array() / (v * v);
        gx.middleCols(d * n, n).array() += gy.middleCols(d * n, n).array() / v;
      }
      break;
    }

    case Op::kAbs: {
      if (!wants(a)) break;
      Matrix<S>& gx = grad_buffer(a);
      const Index vc = n > 0 ? n : gy.cols();
      gx.leftCols(vc).array() += node.aux.array() * gy.leftCols(vc).array();
      for (int d = 1; n > 0 && d <= 3; ++d) gx.middleCols(d * n, n).array() += node.aux.array() * gy.middleCols(d * n, n).array();
      break;
    }

    case Op::kSumRows:
      if (wants(a)) grad_buffer(a).rowwise() += gy.row(0);
      break;

    case Op::kNorm: {
      if (!wants(a)) break;
      const auto& X = value(a);
      Matrix<S>& gx = grad_buffer(a);
      if (n > 0) {
        Eigen::Array<S, 1, Eigen::Dynamic> inv = safe(node.own.leftCols(n).array()).inverse();
        inv = (node.own.leftCols(n).array() == S(0)).select(S(0), inv);
        auto xv = X.leftCols(n).array();
        const Eigen::Array<S, 1, Eigen::Dynamic> g0 = gy.leftCols(n).array();
        gx.leftCols(n).array() += xv.rowwise() * (g0 * inv);
        for (int d = 1; d <= 3; ++d) {
          auto t = X.middleCols(d * n, n).array();
          Eigen::Array<S, 1, Eigen::Dynamic> g = gy.middleCols(d * n, n).array();
          Eigen::Array<S, 1, Eigen::Dynamic> dot = (xv * t).colwise().sum();
          gx.leftCols(n).array() += t.rowwise() * (g * inv) - xv.rowwise() * (g * dot * inv * inv * inv);
          gx.middleCols(d * n, n).array() += xv.rowwise() * (g * inv);
        }
      } else {
        Eigen::Array<S, 1, Eigen::Dynamic> inv = safe(node.own.array()).inverse();
        inv = (node.own.array() == S(0)).select(S(0), inv);
        gx.array() += X.array().rowwise() * (gy.array().row(0) * inv);
      }
      break;
    }

    case Op::kInner: {
      const auto& A = value(a);
      const auto& B = value(b);
      for (int side = 0; side < 2; ++side) {
        const int self = side == 0 ? a : b;
        if (!wants(self)) continue;
        const auto& other = side == 0 ? B : A;
        Matrix<S>& g = grad_buffer(self);
        if (n > 0) {
          g.leftCols(n).array() += other.leftCols(n).array().rowwise() * gy.leftCols(n).array().row(0);
          for (int d = 1; d <= 3; ++d) {
            auto gd = gy.middleCols(d * n, n).array().row(0);
            g.leftCols(n).array() += other.middleCols(d * n, n).array().rowwise() * gd;
            g.middleCols(d * n, n).array() += other.leftCols(n).array().rowwise() * gd;
          }
        } else {
          g.array() += other.array().rowwise() * gy.array().row(0);
        }
      }
      break;
    }

    case Op::kSliceRows:
      if (wants(a)) grad_buffer(a).middleRows(node.i0, node.i1) += gy;
      break;

    case Op::kSliceCols:
      if (wants(a)) grad_buffer(a).middleCols(node.i0, node.i1) += gy;
      break;

    case Op::kSumAll:
      if (wants(a)) grad_buffer(a).array() += gy(0, 0);
      break;

    case Op::kMeanAll:
      if (wants(a)) grad_buffer(a).array() += gy(0, 0) / static_cast<S>(value(a).size());
      break;

    case Op::kValue:
      if (wants(a)) grad_buffer(a).leftCols(gy.cols()) += gy;
      break;

    case Op::kGrad: {
      if (!wants(a)) break;
      const Index np = gy.cols();
      Matrix<S>& gx = grad_buffer(a);
      for (int d = 0; d < 3; ++d) gx.block(node.i0, (d + 1) * np, 1, np) += gy.row(d);
      break;
    }

    case Op::kReseed:
      if (wants(a)) grad_buffer(a).leftCols(n) += gy.leftCols(n);
      break;

    case Op::kReshape:
      if (wants(a))
        grad_buffer(a).middleRows(node.i0, gy.size()) += Eigen::Map<const Vector<S>>(gy.data(), gy.size());
      break;
  }
  (void)c;
}

// ---- free-function sugar ----------------------------------------------------

template <typename S> Var<S> operator+(Var<S> a, Var<S> b) { return a.tape().add(a, b); }
template <typename S> Var<S> operator-(Var<S> a, Var<S> b) { return a.tape().sub(a, b); }
template <typename S> Var<S> operator*(Var<S> a, Var<S> b) { return a.tape().mul(a, b); }
template <typename S> Var<S> operator*(S k, Var<S> x) { return x.tape().scale(x, k); }

template <typename S> Var<S> affine(Var<S> w, Var<S> b, Var<S> x) { return x.tape().affine(w, b, x); }
template <typename S> Var<S> sine(Var<S> x, S freq = S(1)) { return x.tape().sine(x, freq); }
template <typename S> Var<S> relu(Var<S> x) { return x.tape().relu(x); }
template <typename S> Var<S> exp(Var<S> x) { return x.tape().exp(x); }
template <typename S> Var<S> log(Var<S> x) { return x.tape().log(x); }
template <typename S> Var<S> abs(Var<S> x) { return x.tape().abs(x); }
template <typename S> Var<S> norm(Var<S> x) { return x.tape().norm(x); }
template <typename S> Var<S> inner(Var<S> a, Var<S> b) { return a.tape().inner(a, b); }
template <typename S> Var<S> sum_rows(Var<S> x) { return x.tape().sum_rows(x); }
template <typename S> Var<S> sum_all(Var<S> x) { return x.tape().sum_all(x); }
template <typename S> Var<S> mean_all(Var<S> x) { return x.tape().mean_all(x); }
template <typename S> Var<S> scale(Var<S> x, S a, S c = S(0)) { return x.tape().scale(x, a, c); }

}  // namespace dif::diffkit
