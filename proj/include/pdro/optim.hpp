#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>

#include "pdro/error.hpp"

namespace pdro {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0) || !(epsilon > 0.0)) {
      throw ParameterError("Adam learning_rate and epsilon must be positive");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ParameterError("Adam beta1 and beta2 must lie in (0, 1)");
    }
  }
};

struct AdamState {
  Eigen::VectorXd params;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step_count = 0;

  AdamState() = default;
  explicit AdamState(Eigen::VectorXd initial)
      : params(std::move(initial)),
        m(Eigen::VectorXd::Zero(params.size())),
        v(Eigen::VectorXd::Zero(params.size())) {}
};

namespace detail {

inline void check_finite(const Eigen::Ref<const Eigen::VectorXd>& g, const char* what) {
  if (!g.allFinite()) throw NumericError(std::string(what) + " contains a non-finite entry");
}

}  // namespace detail

/// In-place Adam step with bias correction. Shared by every fitting routine so the
/// model code only has to supply gradients.
inline void adam_step(AdamState& state, const Eigen::Ref<const Eigen::VectorXd>& grad,
                      const AdamHyper& hyper) {
  if (grad.size() != state.params.size() || state.m.size() != state.params.size() ||
      state.v.size() != state.params.size()) {
    throw DimensionError("Adam gradient length " + std::to_string(grad.size()) +
                         " does not match parameter length " +
                         std::to_string(state.params.size()));
  }
  detail::check_finite(grad, "Adam gradient");

  state.step_count += 1;
  const auto t = static_cast<double>(state.step_count);
  state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad;
  state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  state.params.array() -=
      hyper.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + hyper.epsilon);
}

inline AdamState adam_update(AdamState state, const Eigen::Ref<const Eigen::VectorXd>& grad,
                             const AdamHyper& hyper) {
  adam_step(state, grad, hyper);
  return state;
}

/// Central-difference gradient. Used as the test oracle for every analytic gradient.
template <class F>
  requires std::invocable<F&, const Eigen::VectorXd&>
Eigen::VectorXd finite_diff_grad(F&& f, const Eigen::VectorXd& x, double eps) {
  if (!(eps > 0.0)) throw ParameterError("finite difference step must be positive");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = static_cast<double>(f(probe));
    probe[i] = x[i] - eps;
    const double down = static_cast<double>(f(probe));
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value during finite differencing");
    }
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

}  // namespace pdro
