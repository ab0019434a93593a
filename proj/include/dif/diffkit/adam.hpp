#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dif::diffkit {

/// Named contiguous ranges of a flat parameter vector.
struct ParamLayout {
  struct Block {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
  };
  std::vector<Block> blocks;

  Eigen::Index total() const { return blocks.empty() ? 0 : blocks.back().offset + blocks.back().size; }
  void add(std::string name, Eigen::Index size) { blocks.push_back({std::move(name), total(), size}); }
  const std::string& block_of(Eigen::Index i) const {
    for (const auto& b : blocks)
      if (i >= b.offset && i < b.offset + b.size) return b.name;
    static const std::string unknown = "<unnamed>";
    return unknown;
  }
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& block)
      : std::runtime_error("non-finite gradient in parameter block '" + block + "'"), block_(block) {}
  const std::string& block() const noexcept { return block_; }

 private:
  std::string block_;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Eigen::Index n, double lr) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    s.lr = lr;
    return s;
  }
};

namespace detail {
template <typename S>
void adam_step_impl(AdamState& state, Eigen::Ref<Eigen::Matrix<S, Eigen::Dynamic, 1>> params,
                    const Eigen::Ref<const Eigen::Matrix<S, Eigen::Dynamic, 1>>& grads, const ParamLayout* layout) {
  const Eigen::Index n = params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n)
    throw std::invalid_argument("adam_step: length mismatch (params " + std::to_string(n) + ", grads " +
                                std::to_string(grads.size()) + ", state " + std::to_string(state.m.size()) + ")");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(grads(i)))) throw NonFiniteGradient(layout ? layout->block_of(i) : "params");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  const double step = state.lr / bc1;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = static_cast<double>(grads(i));
    state.m(i) = state.beta1 * state.m(i) + (1.0 - state.beta1) * g;
    state.v(i) = state.beta2 * state.v(i) + (1.0 - state.beta2) * g * g;
    const double denom = std::sqrt(state.v(i) / bc2) + state.eps;
    params(i) -= static_cast<S>(step * state.m(i) / denom);
  }
}
}  // namespace detail

/// One bias-corrected Adam update. Moments are kept in double regardless of the
/// parameter precision.
inline void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXf> params, const Eigen::Ref<const Eigen::VectorXf>& grads,
                      const ParamLayout* layout = nullptr) {
  detail::adam_step_impl<float>(state, params, grads, layout);
}
inline void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads,
                      const ParamLayout* layout = nullptr) {
  detail::adam_step_impl<double>(state, params, grads, layout);
}

}  // namespace dif::diffkit
