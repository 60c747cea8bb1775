#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdro/error.hpp"
#include "pdro/optim.hpp"
#include "pdro/simplex.hpp"

namespace pdro {

struct SoftmaxConfig {
  int epochs = 2000;
  AdamHyper adam{.learning_rate = 0.05};
  double ridge = 1e-6;
  bool with_intercept = false;
};

/// Multinomial logistic model P(S = s | x) = softmax(beta x)_s. The last row of beta
/// is pinned to zero for identifiability. With an intercept, column 0 of beta
/// multiplies a constant 1 and the remaining columns multiply x.
class SoftmaxModel {
 public:
  SoftmaxModel() = default;

  SoftmaxModel(Eigen::MatrixXd beta, bool with_intercept)
      : beta_(std::move(beta)), with_intercept_(with_intercept) {
    if (beta_.rows() < 1) throw ParameterError("softmax model needs at least one class");
    if (!beta_.row(beta_.rows() - 1).isZero(0.0)) {
      throw ParameterError("last softmax row must be pinned to zero");
    }
  }

  int num_sources() const { return static_cast<int>(beta_.rows()); }
  int input_dim() const { return static_cast<int>(beta_.cols()) - (with_intercept_ ? 1 : 0); }
  bool with_intercept() const { return with_intercept_; }
  const Eigen::MatrixXd& beta() const { return beta_; }

  Eigen::MatrixXd design(const Eigen::MatrixXd& X) const {
    if (X.cols() != input_dim()) {
      throw DimensionError("membership model expects " + std::to_string(input_dim()) + " covariates, got " +
                           std::to_string(X.cols()));
    }
    if (!with_intercept_) return X;
    Eigen::MatrixXd D(X.rows(), X.cols() + 1);
    D.col(0).setOnes();
    D.rightCols(X.cols()) = X;
    return D;
  }

  /// n x |S| matrix of membership probabilities; each row is a softmax.
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& X) const {
    return row_softmax(design(X) * beta_.transpose());
  }

  static Eigen::MatrixXd row_softmax(Eigen::MatrixXd logits) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    return logits;
  }

 private:
  Eigen::MatrixXd beta_;
  bool with_intercept_ = false;
};

inline SimplexVector predict_membership(const SoftmaxModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::MatrixXd row = x.transpose();
  return SimplexVector::normalized(model.probabilities(row).row(0).transpose());
}

/// Mean multinomial log-likelihood of 0-based labels under coefficient matrix beta
/// (rows = classes) applied to design matrix D.
inline double softmax_log_likelihood(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& D,
                                     const std::vector<int>& labels0, Eigen::MatrixXd* grad = nullptr) {
  const Eigen::MatrixXd logits = D * beta.transpose();
  double ll = 0.0;
  Eigen::MatrixXd resid(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double total = e.sum();
    const int y = labels0[static_cast<std::size_t>(i)];
    ll += logits(i, y) - mx - std::log(total);
    resid.row(i) = e / total;
    resid(i, y) -= 1.0;
  }
  const auto n = static_cast<double>(logits.rows());
  // d(mean ll)/d beta = -(P - Y)^T D / n
  if (grad) *grad = -(resid.transpose() * D) / n;
  return ll / n;
}

inline SoftmaxModel fit_softmax(const Eigen::MatrixXd& X, const std::vector<int>& labels, int num_sources,
                                const SoftmaxConfig& config = {}) {
  if (num_sources < 1) throw ParameterError("number of sources must be positive");
  if (static_cast<Eigen::Index>(labels.size()) != X.rows()) {
    throw DimensionError("label count does not match covariate rows");
  }
  if (X.rows() == 0) throw InputError("fit_softmax: no rows");
  if (!X.allFinite()) throw InputError("fit_softmax: non-finite covariates");
  std::vector<int> labels0(labels.size());
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_sources), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || labels[i] > num_sources) {
      throw ClassCoverageError("source label " + std::to_string(labels[i]) + " outside 1.." +
                               std::to_string(num_sources));
    }
    labels0[i] = labels[i] - 1;
    ++counts[static_cast<std::size_t>(labels0[i])];
  }
  for (int s = 0; s < num_sources; ++s) {
    if (counts[static_cast<std::size_t>(s)] == 0) {
      throw ClassCoverageError("source " + std::to_string(s + 1) + " has no rows");
    }
  }
  config.adam.validate();

  const Eigen::Index width = X.cols() + (config.with_intercept ? 1 : 0);
  if (num_sources == 1) return SoftmaxModel(Eigen::MatrixXd::Zero(1, width), config.with_intercept);

  const SoftmaxModel shape(Eigen::MatrixXd::Zero(num_sources, width), config.with_intercept);
  const Eigen::MatrixXd D = shape.design(X);
  const Eigen::Index free_rows = num_sources - 1;

  AdamState state(Eigen::VectorXd::Zero(free_rows * width));
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(num_sources, width);
  Eigen::MatrixXd g;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    beta.topRows(free_rows) = Eigen::Map<const Eigen::MatrixXd>(state.params.data(), free_rows, width);
    const double ll = softmax_log_likelihood(beta, D, labels0, &g);
    if (!std::isfinite(ll)) throw TrainingError("membership log-likelihood became non-finite");
    Eigen::MatrixXd loss_grad = -g.topRows(free_rows) + config.ridge * beta.topRows(free_rows);
    adam_step(state, Eigen::Map<const Eigen::VectorXd>(loss_grad.data(), loss_grad.size()), config.adam);
  }
  beta.topRows(free_rows) = Eigen::Map<const Eigen::MatrixXd>(state.params.data(), free_rows, width);
  return SoftmaxModel(std::move(beta), config.with_intercept);
}

inline nlohmann::json to_json(const SoftmaxModel& m) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.beta().rows()));
  for (Eigen::Index s = 0; s < m.beta().rows(); ++s) {
    for (Eigen::Index j = 0; j < m.beta().cols(); ++j) rows[static_cast<std::size_t>(s)].push_back(m.beta()(s, j));
  }
  return {{"num_sources", m.num_sources()},
          {"input_dim", m.input_dim()},
          {"with_intercept", m.with_intercept()},
          {"beta", rows}};
}

inline SoftmaxModel softmax_from_json(const nlohmann::json& j) {
  try {
    const auto rows = j.at("beta").get<std::vector<std::vector<double>>>();
    const bool intercept = j.at("with_intercept").get<bool>();
    const int k = j.at("num_sources").get<int>();
    if (static_cast<int>(rows.size()) != k || rows.empty()) throw InputError("softmax JSON row count mismatch");
    Eigen::MatrixXd beta(k, static_cast<Eigen::Index>(rows.front().size()));
    for (int s = 0; s < k; ++s) {
      if (rows[static_cast<std::size_t>(s)].size() != rows.front().size()) {
        throw InputError("softmax JSON rows have unequal length");
      }
      for (std::size_t c = 0; c < rows.front().size(); ++c) {
        beta(s, static_cast<Eigen::Index>(c)) = rows[static_cast<std::size_t>(s)][c];
      }
    }
    SoftmaxModel m(std::move(beta), intercept);
    if (m.input_dim() != j.at("input_dim").get<int>()) throw InputError("softmax JSON input_dim mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed softmax JSON: ") + e.what());
  }
}

}  // namespace pdro
