#pragma once

#include "dif/diffkit/tape.hpp"

#include <Eigen/Dense>

namespace dif::diffkit {

/// A raw input point with its 3x3 tangent seed (identity for a raw input).
template <typename S>
struct DualPoint {
  Eigen::Matrix<S, 3, 1> value = Eigen::Matrix<S, 3, 1>::Zero();
  Eigen::Matrix<S, 3, 3> tangents = Eigen::Matrix<S, 3, 3>::Identity();
};

template <typename S>
struct DualResult {
  Vector<S> outputs;
  Matrix<S> jacobian;  // outputs x 3
};

/// Evaluates `net` (Var -> Var, built from tape primitives) on a dual seeded
/// at p and returns the outputs together with d(outputs)/dp.
template <typename S, typename Net>
DualResult<S> forward_dual(Net&& net, const Eigen::Matrix<S, 3, 1>& p) {
  Tape<S> tape;
  Var<S> y = net(tape.dual_input(Matrix<S>(p)));
  if (!y.is_dual()) throw UnsupportedOp("forward_dual", "closure output lost its tangents");
  const auto& Y = y.value();
  DualResult<S> out;
  out.outputs = Y.col(0);
  out.jacobian.resize(Y.rows(), 3);
  for (int d = 0; d < 3; ++d) out.jacobian.col(d) = Y.col(d + 1);
  return out;
}

/// Batched variant: points is 3 x N; returns R x N values and, per output row
/// r, the 3 x N gradient in grads[r].
template <typename S, typename Net>
std::pair<Matrix<S>, std::vector<Matrix<S>>> forward_dual_batch(Net&& net, const Matrix<S>& points) {
  Tape<S> tape;
  Var<S> y = net(tape.dual_input(points));
  if (!y.is_dual()) throw UnsupportedOp("forward_dual", "closure output lost its tangents");
  const Index n = points.cols();
  const auto& Y = y.value();
  std::vector<Matrix<S>> grads(Y.rows(), Matrix<S>(3, n));
  for (Index r = 0; r < Y.rows(); ++r)
    for (int d = 0; d < 3; ++d) grads[r].row(d) = Y.block(r, (d + 1) * n, 1, n);
  return {Y.leftCols(n), std::move(grads)};
}

/// Plain (value-only) evaluation of the same closure.
template <typename S, typename Net>
Matrix<S> forward_plain(Net&& net, const Matrix<S>& points) {
  Tape<S> tape;
  return net(tape.constant(points)).value();
}

}  // namespace dif::diffkit
