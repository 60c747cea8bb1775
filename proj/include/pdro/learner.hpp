#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdro/dataset.hpp"
#include "pdro/error.hpp"
#include "pdro/membership.hpp"
#include "pdro/mlp.hpp"
#include "pdro/optim.hpp"
#include "pdro/simplex.hpp"

namespace pdro {

// Piecewise-linear ramp standing in for the indicator I(u > 0):
// 0 below -h, (u + h) / (2h) on [-h, h], 1 above h.
inline double phi_h(double u, double h) {
  if (!(h > 0.0)) throw ParameterError("bandwidth h must be positive");
  if (u < -h) return 0.0;
  if (u > h) return 1.0;
  return (u + h) / (2.0 * h);
}

// Almost-everywhere derivative of phi_h; the kinks at |u| = h take the interior value.
inline double phi_h_slope(double u, double h) { return std::abs(u) <= h ? 1.0 / (2.0 * h) : 0.0; }

inline void check_delta(double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw ParameterError("delta must lie in [0, 1], got " + std::to_string(delta));
  }
}

/// Fitted nuisance functions: one CATE model per source plus the membership model.
struct NuisanceSet {
  std::vector<SourceCate> cates;
  SoftmaxModel membership;

  int num_sources() const { return static_cast<int>(cates.size()); }
  int input_dim() const { return cates.empty() ? 0 : cates.front().input_dim(); }

  void validate() const {
    if (cates.empty()) throw InputError("nuisance set has no sources");
    if (membership.num_sources() != num_sources()) {
      throw DimensionError("membership model has " + std::to_string(membership.num_sources()) +
                           " classes but there are " + std::to_string(num_sources()) + " CATE models");
    }
    for (const auto& c : cates) {
      if (c.f1.input_dim() != input_dim() || c.f0.input_dim() != input_dim()) {
        throw DimensionError("CATE models disagree on covariate dimension");
      }
    }
    if (membership.input_dim() != input_dim()) throw DimensionError("membership model dimension mismatch");
  }
};

/// Per-row nuisance evaluations on a fixed covariate sample (rows = points,
/// columns = sources). Every learner routine works on these so the networks are
/// evaluated once per sample, and tests can substitute analytic values.
struct ScoreInputs {
  Eigen::MatrixXd cate;
  Eigen::MatrixXd membership;

  Eigen::Index rows() const { return cate.rows(); }
  Eigen::Index num_sources() const { return cate.cols(); }

  void validate() const {
    if (cate.rows() != membership.rows() || cate.cols() != membership.cols()) {
      throw DimensionError("CATE and membership evaluations have different shapes");
    }
  }
};

/// Calibration rows: membership plus both arm regressions per source, and the labels.
struct CalibrationInputs {
  Eigen::MatrixXd membership;
  Eigen::MatrixXd f1;
  Eigen::MatrixXd f0;
  std::vector<int> A;
  Eigen::VectorXd Y;
};

inline ScoreInputs evaluate_nuisance(const NuisanceSet& nuisance, const Eigen::MatrixXd& X) {
  nuisance.validate();
  if (X.cols() != nuisance.input_dim()) {
    throw DimensionError("covariates have " + std::to_string(X.cols()) + " columns, nuisance expects " +
                         std::to_string(nuisance.input_dim()));
  }
  ScoreInputs in;
  in.cate.resize(X.rows(), nuisance.num_sources());
  for (int s = 0; s < nuisance.num_sources(); ++s) {
    in.cate.col(s) = nuisance.cates[static_cast<std::size_t>(s)].cate(X);
  }
  in.membership = nuisance.membership.probabilities(X);
  return in;
}

inline CalibrationInputs evaluate_calibration(const NuisanceSet& nuisance, const Dataset& calibration) {
  nuisance.validate();
  if (!calibration.has_labels()) throw InputError("calibration set needs treatment and outcome columns");
  if (calibration.dim() != nuisance.input_dim()) throw DimensionError("calibration covariate dimension mismatch");
  CalibrationInputs in;
  in.membership = nuisance.membership.probabilities(calibration.X);
  in.f1.resize(calibration.rows(), nuisance.num_sources());
  in.f0.resize(calibration.rows(), nuisance.num_sources());
  for (int s = 0; s < nuisance.num_sources(); ++s) {
    in.f1.col(s) = nuisance.cates[static_cast<std::size_t>(s)].f1.predict(calibration.X);
    in.f0.col(s) = nuisance.cates[static_cast<std::size_t>(s)].f0.predict(calibration.X);
  }
  in.A = calibration.A;
  in.Y = calibration.Y;
  return in;
}

/// Individualized weights delta * omega(x) + (1 - delta) * rho, one row per point.
inline Eigen::MatrixXd individual_weights(const Eigen::MatrixXd& membership, const SimplexVector& rho,
                                          double delta) {
  check_delta(delta);
  if (rho.size() != membership.cols()) throw DimensionError("rho length does not match number of sources");
  Eigen::MatrixXd W = delta * membership;
  W.rowwise() += ((1.0 - delta) * rho.weights()).transpose();
  return W;
}

/// Robust scores f(x) = sum_s W_s(x) C_s(x) for every row of the inputs.
inline Eigen::VectorXd robust_scores(const ScoreInputs& in, const SimplexVector& rho, double delta) {
  in.validate();
  return individual_weights(in.membership, rho, delta).cwiseProduct(in.cate).rowwise().sum();
}

inline double robust_score(const Eigen::Ref<const Eigen::RowVectorXd>& x, const NuisanceSet& nuisance,
                           const SimplexVector& rho, double delta) {
  check_delta(delta);
  return robust_scores(evaluate_nuisance(nuisance, Eigen::MatrixXd(x)), rho, delta)[0];
}

struct ObjectiveValue {
  double value = 0.0;
  Eigen::VectorXd grad;  // with respect to the free softmax parameters z
};

/// Smoothed worst-case value (1/m) sum_i f_i * phi_h(f_i) with rho = softmax(z), and
/// its exact gradient in z.
inline ObjectiveValue smoothed_objective(const Eigen::Ref<const Eigen::VectorXd>& z, const ScoreInputs& in,
                                         double delta, double h) {
  in.validate();
  check_delta(delta);
  if (!(h > 0.0)) throw ParameterError("bandwidth h must be positive");
  if (in.rows() < 1) throw InputError("pooled covariate sample is empty");
  if (z.size() != in.num_sources()) throw DimensionError("z length does not match number of sources");

  const SimplexVector rho = SimplexVector::softmax(z);
  const Eigen::VectorXd prior = delta * in.membership.cwiseProduct(in.cate).rowwise().sum();
  const Eigen::VectorXd f = prior + (1.0 - delta) * (in.cate * rho.weights());
  const auto m = static_cast<double>(in.rows());

  double value = 0.0;
  Eigen::VectorXd dvalue_df(in.rows());
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const double phi = phi_h(f[i], h);
    value += f[i] * phi;
    dvalue_df[i] = phi + f[i] * phi_h_slope(f[i], h);
  }
  value /= m;
  const Eigen::VectorXd grad_rho = (1.0 - delta) * (in.cate.transpose() * dvalue_df) / m;
  // Softmax Jacobian: d rho_s / d z_k = rho_s (1[s = k] - rho_k).
  const Eigen::VectorXd& r = rho.weights();
  Eigen::VectorXd grad_z = r.cwiseProduct((grad_rho.array() - r.dot(grad_rho)).matrix());
  return {value, std::move(grad_z)};
}

inline ObjectiveValue smoothed_objective(const Eigen::Ref<const Eigen::VectorXd>& z, const Eigen::MatrixXd& pooled_X,
                                         const NuisanceSet& nuisance, double delta, double h) {
  if (pooled_X.rows() == 0) throw InputError("pooled covariate sample is empty");
  return smoothed_objective(z, evaluate_nuisance(nuisance, pooled_X), delta, h);
}

/// Objective value at a given rho, without the softmax chain rule. Used for grid
/// oracles and for reporting.
inline double smoothed_value(const ScoreInputs& in, const SimplexVector& rho, double delta, double h) {
  if (!(h > 0.0)) throw ParameterError("bandwidth h must be positive");
  const Eigen::VectorXd f = robust_scores(in, rho, delta);
  double value = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) value += f[i] * phi_h(f[i], h);
  return value / static_cast<double>(f.size());
}

/// h = sd(scores at uniform rho) / sqrt(m); falls back to 1/sqrt(m) when the scores
/// are constant.
inline double default_bandwidth(const ScoreInputs& in, double delta) {
  const Eigen::VectorXd f = robust_scores(in, SimplexVector::uniform(in.num_sources()), delta);
  const auto m = static_cast<double>(f.size());
  double sd = 0.0;
  if (f.size() > 1) sd = std::sqrt((f.array() - f.mean()).square().sum() / (m - 1.0));
  const double c = sd > 1e-12 ? sd : 1.0;
  return c / std::sqrt(m);
}

struct RhoConfig {
  int steps = 1000;
  AdamHyper adam{.learning_rate = 0.05};
};

struct RhoFit {
  SimplexVector rho;
  double objective = 0.0;
  double bandwidth = 0.0;
};

/// Minimizes the smoothed objective over the simplex by Adam on softmax parameters
/// started at z = 0. Returns the best iterate seen, which is never worse than the
/// uniform start.
inline RhoFit fit_rho(const ScoreInputs& in, double delta, double h, const RhoConfig& config = {}) {
  in.validate();
  check_delta(delta);
  if (!(h > 0.0)) throw ParameterError("bandwidth h must be positive");
  if (in.rows() < 1) throw InputError("pooled covariate sample is empty");
  config.adam.validate();
  const auto k = in.num_sources();
  if (k == 1) return {SimplexVector{1.0}, smoothed_value(in, SimplexVector{1.0}, delta, h), h};

  AdamState state(Eigen::VectorXd::Zero(k));
  ObjectiveValue cur = smoothed_objective(state.params, in, delta, h);
  Eigen::VectorXd best_z = state.params;
  double best = cur.value;
  for (int step = 0; step < config.steps; ++step) {
    if (!std::isfinite(cur.value)) throw NumericError("smoothed objective became non-finite");
    adam_step(state, cur.grad, config.adam);
    cur = smoothed_objective(state.params, in, delta, h);
    if (cur.value < best) {
      best = cur.value;
      best_z = state.params;
    }
  }
  return {SimplexVector::softmax(best_z), best, h};
}

inline RhoFit fit_rho(const Eigen::MatrixXd& pooled_X, const NuisanceSet& nuisance, double delta,
                      std::optional<double> h, const RhoConfig& config = {}) {
  if (pooled_X.rows() == 0) throw InputError("pooled covariate sample is empty");
  const ScoreInputs in = evaluate_nuisance(nuisance, pooled_X);
  return fit_rho(in, delta, h ? *h : default_bandwidth(in, delta), config);
}

inline std::vector<double> default_delta_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

/// Squared prediction error of the weighted arm regressions on calibration rows:
/// mean over treated rows plus mean over control rows.
inline double calibration_error(const CalibrationInputs& cal, const SimplexVector& rho, double delta) {
  const Eigen::MatrixXd W = individual_weights(cal.membership, rho, delta);
  const Eigen::VectorXd pred1 = W.cwiseProduct(cal.f1).rowwise().sum();
  const Eigen::VectorXd pred0 = W.cwiseProduct(cal.f0).rowwise().sum();
  double sse1 = 0.0, sse0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < cal.A.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (cal.A[i] == 1) {
      sse1 += std::pow(pred1[r] - cal.Y[r], 2);
      ++n1;
    } else {
      sse0 += std::pow(pred0[r] - cal.Y[r], 2);
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) throw ArmCoverageError("calibration set needs at least one treated and one control row");
  return sse1 / static_cast<double>(n1) + sse0 / static_cast<double>(n0);
}

struct DeltaTuning {
  double delta = 0.0;
  SimplexVector rho;
  double bandwidth = 0.0;
  std::vector<double> grid;
  std::vector<double> errors;  // calibration error per grid point
};

/// Grid search over delta. Each candidate gets its own rho fit; ties (within 1e-12
/// relative) go to the larger delta.
inline DeltaTuning tune_delta(const CalibrationInputs& cal, const ScoreInputs& pooled, std::optional<double> h,
                              const std::vector<double>& grid, const RhoConfig& config = {}) {
  if (grid.empty()) throw ParameterError("delta grid is empty");
  std::size_t n1 = 0;
  for (int a : cal.A) n1 += (a == 1);
  if (n1 == 0 || n1 == cal.A.size()) {
    throw ArmCoverageError("calibration set needs at least one treated and one control row");
  }
  for (double d : grid) check_delta(d);

  DeltaTuning out;
  out.grid = grid;
  bool have = false;
  double best_err = 0.0;
  for (double delta : grid) {
    const double bw = h ? *h : default_bandwidth(pooled, delta);
    RhoFit fit = fit_rho(pooled, delta, bw, config);
    const double err = calibration_error(cal, fit.rho, delta);
    out.errors.push_back(err);
    const double tol = 1e-12 * std::max(1.0, std::abs(best_err));
    const bool tie = have && std::abs(err - best_err) <= tol;
    if (!have || err < best_err - tol || (tie && delta > out.delta)) {
      have = true;
      best_err = err;
      out.delta = delta;
      out.rho = std::move(fit.rho);
      out.bandwidth = bw;
    }
  }
  return out;
}

inline DeltaTuning tune_delta(const Dataset& calibration, const NuisanceSet& nuisance, const Eigen::MatrixXd& pooled_X,
                              std::optional<double> h, const std::vector<double>& grid,
                              const RhoConfig& config = {}) {
  if (pooled_X.rows() == 0) throw InputError("pooled covariate sample is empty");
  return tune_delta(evaluate_calibration(nuisance, calibration), evaluate_nuisance(nuisance, pooled_X), h, grid,
                    config);
}

/// Anything that maps a covariate matrix to binary decisions.
template <class P>
concept DecisionRule = requires(const P& p, const Eigen::MatrixXd& X) {
  { p.decisions(X) } -> std::same_as<std::vector<int>>;
  { p.scores(X) } -> std::same_as<Eigen::VectorXd>;
};

inline std::vector<int> decisions_from_scores(const Eigen::VectorXd& scores) {
  std::vector<int> d(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) d[static_cast<std::size_t>(i)] = scores[i] > 0.0 ? 1 : 0;
  return d;
}

/// Treat iff the individually weighted source CATE sum is strictly positive.
struct PdroPolicy {
  double delta = 0.0;
  SimplexVector rho;
  NuisanceSet nuisance;

  int input_dim() const { return nuisance.input_dim(); }

  Eigen::VectorXd scores(const Eigen::MatrixXd& X) const {
    return robust_scores(evaluate_nuisance(nuisance, X), rho, delta);
  }
  std::vector<int> decisions(const Eigen::MatrixXd& X) const { return decisions_from_scores(scores(X)); }
};

template <DecisionRule P>
int decide(const P& policy, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return policy.decisions(Eigen::MatrixXd(x)).front();
}

inline PdroPolicy fit_dro(const Eigen::MatrixXd& pooled_X, const NuisanceSet& nuisance, std::optional<double> h,
                          const RhoConfig& config = {}) {
  RhoFit fit = fit_rho(pooled_X, nuisance, 0.0, h, config);
  return {0.0, std::move(fit.rho), nuisance};
}

inline nlohmann::json to_json(const PdroPolicy& policy) {
  nlohmann::json cates = nlohmann::json::array();
  for (const auto& c : policy.nuisance.cates) cates.push_back({{"f1", to_json(c.f1)}, {"f0", to_json(c.f0)}});
  return {{"format", "pdro-policy"},
          {"version", 1},
          {"delta", policy.delta},
          {"rho", policy.rho.to_vector()},
          {"nuisance", {{"cates", cates}, {"membership", to_json(policy.nuisance.membership)}}}};
}

inline PdroPolicy policy_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "pdro-policy") throw InputError("not a pdro-policy document");
    PdroPolicy p;
    p.delta = j.at("delta").get<double>();
    check_delta(p.delta);
    const auto rho = j.at("rho").get<std::vector<double>>();
    p.rho = SimplexVector(Eigen::Map<const Eigen::VectorXd>(rho.data(), static_cast<Eigen::Index>(rho.size())));
    for (const auto& c : j.at("nuisance").at("cates")) {
      p.nuisance.cates.push_back({mlp_from_json(c.at("f1")), mlp_from_json(c.at("f0"))});
    }
    p.nuisance.membership = softmax_from_json(j.at("nuisance").at("membership"));
    p.nuisance.validate();
    if (p.rho.size() != p.nuisance.num_sources()) throw InputError("policy rho length does not match sources");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed policy JSON: ") + e.what());
  }
}

}  // namespace pdro
