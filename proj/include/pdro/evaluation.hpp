#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pdro/dataset.hpp"
#include "pdro/error.hpp"
#include "pdro/learner.hpp"
#include "pdro/membership.hpp"
#include "pdro/synthetic.hpp"

namespace pdro {

struct EvalReport {
  std::string method_name;
  double policy_value = 0.0;
  std::optional<double> worst_case_value;
  Eigen::Index n_test = 0;
  int rho_draws = 0;
  std::map<std::string, std::string> metadata;
};

/// Mean of cate * decision over the test points.
inline double policy_value_from_decisions(const std::vector<int>& decisions, const Eigen::VectorXd& cate) {
  if (decisions.empty()) throw InputError("policy value needs at least one test point");
  if (static_cast<Eigen::Index>(decisions.size()) != cate.size()) {
    throw DimensionError("decision and CATE vectors differ in length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i]) total += cate[static_cast<Eigen::Index>(i)];
  }
  return total / static_cast<double>(decisions.size());
}

template <DecisionRule P, class Oracle>
  requires std::invocable<Oracle&, const Eigen::RowVectorXd&>
double empirical_policy_value(const P& policy, const Eigen::MatrixXd& X_test, Oracle&& cate_oracle) {
  if (X_test.rows() == 0) throw InputError("policy value needs at least one test point");
  Eigen::VectorXd cate(X_test.rows());
  for (Eigen::Index i = 0; i < X_test.rows(); ++i) {
    cate[i] = static_cast<double>(cate_oracle(Eigen::RowVectorXd(X_test.row(i))));
  }
  return policy_value_from_decisions(policy.decisions(X_test), cate);
}

/// One test sample and one set of Dirichlet-drawn rho vectors, shared across every
/// method compared within a replication.
class WorstCaseEvaluator {
 public:
  WorstCaseEvaluator(const ScenarioSpec& spec, double delta_true, Eigen::MatrixXd X_test,
                     std::vector<SimplexVector> draws)
      : spec_(spec), delta_(delta_true), X_(std::move(X_test)), draws_(std::move(draws)) {
    if (!(delta_ >= 0.0 && delta_ <= 1.0)) throw ParameterError("delta_true must lie in [0, 1]");
    if (draws_.empty()) throw ParameterError("worst-case evaluation needs at least one rho draw");
    if (X_.rows() == 0) throw InputError("policy value needs at least one test point");
    F_ = scenario_f_matrix(spec_, X_);
    prior_ = true_membership_matrix(spec_, X_).cwiseProduct(F_).rowwise().sum();
  }

  static WorstCaseEvaluator sample(const ScenarioSpec& spec, double delta_true, int n_test, int n_draws,
                                   double alpha, std::uint64_t seed) {
    if (n_draws < 1) throw ParameterError("n_draws must be at least 1");
    Dataset test = gen_target(spec, n_test, delta_true, SimplexVector::uniform(ScenarioSpec::kNumSources), seed,
                              /*with_labels=*/false);
    return {spec, delta_true, std::move(test.X), sample_dirichlet_many(ScenarioSpec::kNumSources, alpha, n_draws, seed)};
  }

  const Eigen::MatrixXd& X_test() const { return X_; }
  const std::vector<SimplexVector>& draws() const { return draws_; }

  Eigen::VectorXd cate(const SimplexVector& rho) const {
    return 2.0 * (delta_ * prior_ + (1.0 - delta_) * (F_ * rho.weights()));
  }

  std::vector<double> values(const std::vector<int>& decisions) const {
    std::vector<double> out;
    out.reserve(draws_.size());
    for (const auto& rho : draws_) out.push_back(policy_value_from_decisions(decisions, cate(rho)));
    return out;
  }

  double worst(const std::vector<int>& decisions) const {
    const auto v = values(decisions);
    return *std::min_element(v.begin(), v.end());
  }

  template <DecisionRule P>
  double worst(const P& policy) const {
    return worst(policy.decisions(X_));
  }

 private:
  ScenarioSpec spec_;
  double delta_;
  Eigen::MatrixXd X_;
  std::vector<SimplexVector> draws_;
  Eigen::MatrixXd F_;
  Eigen::VectorXd prior_;
};

template <DecisionRule P>
double worst_case_value(const P& policy, const ScenarioSpec& spec, double delta_true, int n_test, int n_draws,
                        double alpha, std::uint64_t seed) {
  return WorstCaseEvaluator::sample(spec, delta_true, n_test, n_draws, alpha, seed).worst(policy);
}

/// Doubly robust value estimate from per-row pieces. `pi_observed[i]` is the
/// propensity of the treatment row i actually received.
inline double doubly_robust_value(const std::vector<int>& decisions, const std::vector<int>& A,
                                  const Eigen::VectorXd& Y, const Eigen::VectorXd& pi_observed,
                                  const Eigen::VectorXd& f1, const Eigen::VectorXd& f0) {
  const auto n = A.size();
  if (n == 0) throw InputError("doubly robust estimate needs at least one row");
  if (decisions.size() != n || static_cast<std::size_t>(Y.size()) != n ||
      static_cast<std::size_t>(pi_observed.size()) != n || static_cast<std::size_t>(f1.size()) != n ||
      static_cast<std::size_t>(f0.size()) != n) {
    throw DimensionError("doubly robust inputs differ in length");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double pi = pi_observed[i];
    if (!(pi > 0.0 && pi < 1.0)) {
      throw PositivityError("propensity " + std::to_string(pi) + " at row " + std::to_string(k) +
                            " is outside (0, 1)");
    }
    const double fitted = A[k] == 1 ? f1[i] : f0[i];
    const double ipw = (A[k] == decisions[k]) ? (Y[i] - fitted) / pi : 0.0;
    total += ipw + (decisions[k] ? f1[i] : f0[i]);
  }
  return total / static_cast<double>(n);
}

/// Policy-level form; propensity(a, x) returns P(A = a | x), f1_hat/f0_hat map a row to
/// the fitted arm means.
template <DecisionRule P, class Propensity, class F1, class F0>
double doubly_robust_value(const P& policy, const Dataset& data, Propensity&& propensity, F1&& f1_hat,
                           F0&& f0_hat) {
  if (!data.has_labels()) throw InputError("doubly robust estimate needs treatment and outcome columns");
  const auto n = data.rows();
  Eigen::VectorXd pi(n), f1(n), f0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd x = data.X.row(i);
    pi[i] = propensity(data.A[static_cast<std::size_t>(i)], x);
    f1[i] = f1_hat(x);
    f0[i] = f0_hat(x);
  }
  return doubly_robust_value(policy.decisions(data.X), data.A, data.Y, pi, f1, f0);
}

/// Logistic propensity model P(A = 1 | x) with intercept, clipped to [lo, hi].
struct PropensityModel {
  SoftmaxModel model;
  double lo = 0.01;
  double hi = 0.99;

  // Unclipped P(A = 1 | x) per row.
  Eigen::VectorXd raw_treated(const Eigen::MatrixXd& X) const { return model.probabilities(X).col(0); }

  Eigen::VectorXd treated(const Eigen::MatrixXd& X) const { return raw_treated(X).cwiseMax(lo).cwiseMin(hi); }

  double clip_fraction(const Eigen::MatrixXd& X) const {
    const Eigen::VectorXd p = raw_treated(X);
    if (p.size() == 0) return 0.0;
    return static_cast<double>((p.array() < lo || p.array() > hi).count()) / static_cast<double>(p.size());
  }
};

inline PropensityModel fit_propensity(const Dataset& data, SoftmaxConfig config = {}) {
  if (!data.has_labels()) throw InputError("propensity fit needs a treatment column");
  std::vector<int> labels(data.A.size());
  for (std::size_t i = 0; i < data.A.size(); ++i) labels[i] = data.A[i] == 1 ? 1 : 2;
  config.with_intercept = true;
  return {fit_softmax(data.X, labels, 2, config)};
}

/// Sample-size-weighted average of the source CATEs.
struct NaivePolicy {
  NuisanceSet nuisance;
  Eigen::VectorXd weights;

  Eigen::VectorXd scores(const Eigen::MatrixXd& X) const {
    return evaluate_nuisance(nuisance, X).cate * weights;
  }
  std::vector<int> decisions(const Eigen::MatrixXd& X) const { return decisions_from_scores(scores(X)); }
};

inline NaivePolicy naive_policy(NuisanceSet nuisance, const std::vector<long long>& source_sizes) {
  if (static_cast<int>(source_sizes.size()) != nuisance.num_sources()) {
    throw DimensionError("need one sample size per source");
  }
  long long total = 0;
  for (auto s : source_sizes) {
    if (s < 1) throw InputError("every source needs a positive sample size");
    total += s;
  }
  Eigen::VectorXd w(static_cast<Eigen::Index>(source_sizes.size()));
  for (std::size_t s = 0; s < source_sizes.size(); ++s) {
    w[static_cast<Eigen::Index>(s)] = static_cast<double>(source_sizes[s]) / static_cast<double>(total);
  }
  return {std::move(nuisance), std::move(w)};
}

}  // namespace pdro
