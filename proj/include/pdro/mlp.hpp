#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdro/dataset.hpp"
#include "pdro/error.hpp"
#include "pdro/optim.hpp"
#include "pdro/rng.hpp"

namespace pdro {

struct MlpConfig {
  std::vector<int> hidden = {64, 64};
  int epochs = 500;
  // Full-batch Adam up to this many rows, minibatches of batch_size beyond it.
  int full_batch_limit = 4096;
  int batch_size = 256;
  AdamHyper adam{.learning_rate = 1e-2};
  double output_bound = 200.0;
  // Share of rows held out for early stopping; the returned weights are those with the
  // lowest held-out MSE. Zero, or fewer than 10 rows, trains on everything.
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// Per-feature affine standardization stored alongside a model.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& X) {
    Standardizer s;
    s.mean = X.colwise().mean();
    s.scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double var = (X.col(j).array() - s.mean[j]).square().mean();
      const double sd = std::sqrt(var);
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    return (X.rowwise() - mean).array().rowwise() / scale.array();
  }
};

/// Feedforward ReLU network with a scalar output clipped to +-output_bound/2.
///
/// Parameters live in one flat vector laid out layer by layer as
/// [W_1 (column-major, out x in), b_1, W_2, b_2, ...], which lets Adam treat the
/// whole network as a single parameter vector.
class MlpModel {
 public:
  MlpModel() = default;

  MlpModel(std::vector<int> widths, double output_bound)
      : widths_(std::move(widths)), output_bound_(output_bound) {
    if (widths_.size() < 2 || widths_.back() != 1) {
      throw ParameterError("layer widths must run from the input dimension to a single output");
    }
    for (int w : widths_) {
      if (w < 1) throw ParameterError("layer widths must be positive");
    }
    if (!(output_bound_ > 0.0)) throw ParameterError("output bound must be positive");
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      offsets_.push_back(total);
      total += static_cast<Eigen::Index>(widths_[l + 1]) * (widths_[l] + 1);
    }
    params_ = Eigen::VectorXd::Zero(total);
    input_.mean = Eigen::RowVectorXd::Zero(widths_.front());
    input_.scale = Eigen::RowVectorXd::Ones(widths_.front());
  }

  int input_dim() const { return widths_.empty() ? 0 : widths_.front(); }
  std::size_t num_layers() const { return widths_.size() - 1; }
  const std::vector<int>& widths() const { return widths_; }
  double output_bound() const { return output_bound_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Standardizer& input_scaling() { return input_; }
  const Standardizer& input_scaling() const { return input_; }
  double& target_mean() { return y_mean_; }
  double& target_scale() { return y_scale_; }
  double target_mean() const { return y_mean_; }
  double target_scale() const { return y_scale_; }

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l, const Eigen::VectorXd& p) const {
    return {p.data() + offsets_[l], widths_[l + 1], widths_[l]};
  }
  Eigen::Map<Eigen::MatrixXd> weight(std::size_t l, Eigen::VectorXd& p) const {
    return {p.data() + offsets_[l], widths_[l + 1], widths_[l]};
  }
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l, const Eigen::VectorXd& p) const {
    return {p.data() + offsets_[l] + static_cast<Eigen::Index>(widths_[l + 1]) * widths_[l], widths_[l + 1]};
  }
  Eigen::Map<Eigen::VectorXd> bias(std::size_t l, Eigen::VectorXd& p) const {
    return {p.data() + offsets_[l] + static_cast<Eigen::Index>(widths_[l + 1]) * widths_[l], widths_[l + 1]};
  }

  /// Raw network output on already-standardized inputs laid out one sample per column.
  Eigen::RowVectorXd forward_standardized(const Eigen::MatrixXd& Zt) const {
    Eigen::MatrixXd h = Zt;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Eigen::MatrixXd next = weight(l, params_) * h;
      next.colwise() += bias(l, params_);
      if (l + 1 < num_layers()) next = next.cwiseMax(0.0);
      h = std::move(next);
    }
    return h.row(0);
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const {
    if (X.cols() != input_dim()) {
      throw DimensionError("model expects " + std::to_string(input_dim()) + " covariates, got " +
                           std::to_string(X.cols()));
    }
    if (X.rows() == 0) return Eigen::VectorXd(0);
    const Eigen::RowVectorXd raw = forward_standardized(input_.apply(X).transpose());
    const double half = output_bound_ / 2.0;
    Eigen::VectorXd out = (y_mean_ + y_scale_ * raw.array()).transpose().matrix();
    return out.cwiseMax(-half).cwiseMin(half);
  }

  double predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return predict(Eigen::MatrixXd(x))[0];
  }

 private:
  std::vector<int> widths_;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd params_;
  Standardizer input_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double output_bound_ = 200.0;
};

/// Mean squared error (on the standardized target) and its gradient with respect to
/// the flat parameter vector. Zt holds standardized inputs, one sample per column.
inline double mlp_loss_and_grad(const MlpModel& model, const Eigen::VectorXd& params,
                                const Eigen::MatrixXd& Zt, const Eigen::RowVectorXd& target,
                                Eigen::VectorXd* grad) {
  const std::size_t L = model.num_layers();
  const auto n = static_cast<double>(Zt.cols());
  std::vector<Eigen::MatrixXd> acts;  // acts[l] = input to layer l
  acts.reserve(L + 1);
  acts.push_back(Zt);
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = model.weight(l, params) * acts.back();
    z.colwise() += model.bias(l, params);
    if (l + 1 < L) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  const Eigen::RowVectorXd resid = acts.back().row(0) - target;
  const double loss = resid.squaredNorm() / n;
  if (grad == nullptr) return loss;

  grad->setZero(params.size());
  Eigen::MatrixXd delta = (2.0 / n) * resid;  // 1 x n
  for (std::size_t l = L; l-- > 0;) {
    model.weight(l, *grad).noalias() = delta * acts[l].transpose();
    model.bias(l, *grad) = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = model.weight(l, params).transpose() * delta;
    delta = (acts[l].array() > 0.0).select(back, 0.0);
  }
  return loss;
}

struct MlpFit {
  MlpModel model;
  std::vector<double> loss_history;  // one entry per epoch, standardized-target MSE
};

inline MlpFit fit_mlp_traced(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const MlpConfig& config,
                             const Standardizer* scaling = nullptr) {
  if (X.rows() < 2) throw InputError("fit_mlp needs at least 2 rows, got " + std::to_string(X.rows()));
  if (y.size() != X.rows()) throw InputError("fit_mlp: target length does not match rows");
  if (X.cols() < 1) throw InputError("fit_mlp: no covariates");
  if (!X.allFinite() || !y.allFinite()) throw InputError("fit_mlp: non-finite training data");
  if (config.epochs < 1 || config.batch_size < 1) throw ParameterError("fit_mlp: bad epoch/batch settings");
  config.adam.validate();

  std::vector<int> widths;
  widths.push_back(static_cast<int>(X.cols()));
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  MlpFit fit{MlpModel(widths, config.output_bound), {}};
  MlpModel& model = fit.model;

  model.input_scaling() = scaling ? *scaling : Standardizer::fit(X);
  if (model.input_scaling().mean.size() != X.cols()) throw DimensionError("standardizer width mismatch");
  model.target_mean() = y.mean();
  const double ysd = std::sqrt((y.array() - y.mean()).square().mean());
  model.target_scale() = ysd > 1e-12 ? ysd : 1.0;

  CounterRng init_rng(config.seed, Stream::kInit);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(model.params().size());
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
    auto W = model.weight(l, params);
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
      for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = (2.0 * init_rng.uniform() - 1.0) * limit;
    }
  }

  const Eigen::MatrixXd Z_all = model.input_scaling().apply(X).transpose();
  const Eigen::RowVectorXd y_all =
      ((y.array() - model.target_mean()) / model.target_scale()).transpose().matrix();

  // Seeded holdout split for early stopping.
  const auto n_val = (config.validation_fraction > 0.0 && X.rows() >= 10)
                         ? std::clamp<Eigen::Index>(static_cast<Eigen::Index>(
                                                        std::llround(config.validation_fraction * X.rows())),
                                                    1, X.rows() - 2)
                         : Eigen::Index{0};
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(X.rows()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  if (n_val > 0) {
    CounterRng split_rng(splitmix64(config.seed ^ 0x5e1ec7ULL), Stream::kShuffle);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[split_rng() % i]);
    std::sort(perm.begin(), perm.begin() + n_val);
    std::sort(perm.begin() + n_val, perm.end());
  }
  auto take = [&](Eigen::Index from, Eigen::Index count, Eigen::MatrixXd& Z, Eigen::RowVectorXd& t) {
    Z.resize(Z_all.rows(), count);
    t.resize(count);
    for (Eigen::Index k = 0; k < count; ++k) {
      const auto idx = perm[static_cast<std::size_t>(from + k)];
      Z.col(k) = Z_all.col(idx);
      t[k] = y_all[idx];
    }
  };
  Eigen::MatrixXd Zt, Zv;
  Eigen::RowVectorXd target, target_v;
  take(n_val, X.rows() - n_val, Zt, target);
  take(0, n_val, Zv, target_v);

  AdamState state(std::move(params));
  Eigen::VectorXd grad;
  Eigen::VectorXd best_params;
  double best_val = std::numeric_limits<double>::infinity();
  const auto n = Zt.cols();
  const bool full_batch = n <= config.full_batch_limit;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  CounterRng shuffle_rng(config.seed, Stream::kShuffle);
  fit.loss_history.reserve(static_cast<std::size_t>(config.epochs));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    if (full_batch) {
      epoch_loss = mlp_loss_and_grad(model, state.params, Zt, target, &grad);
      if (!std::isfinite(epoch_loss) || !grad.allFinite()) {
        throw TrainingError("MLP training diverged at epoch " + std::to_string(epoch));
      }
      adam_step(state, grad, config.adam);
    } else {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng() % i]);
      }
      double weighted = 0.0;
      for (Eigen::Index start = 0; start < n; start += config.batch_size) {
        const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
        Eigen::MatrixXd zb(Zt.rows(), len);
        Eigen::RowVectorXd tb(len);
        for (Eigen::Index k = 0; k < len; ++k) {
          const auto idx = order[static_cast<std::size_t>(start + k)];
          zb.col(k) = Zt.col(idx);
          tb[k] = target[idx];
        }
        const double loss = mlp_loss_and_grad(model, state.params, zb, tb, &grad);
        if (!std::isfinite(loss) || !grad.allFinite()) {
          throw TrainingError("MLP training diverged at epoch " + std::to_string(epoch));
        }
        weighted += loss * static_cast<double>(len);
        adam_step(state, grad, config.adam);
      }
      epoch_loss = weighted / static_cast<double>(n);
    }
    fit.loss_history.push_back(epoch_loss);
    if (n_val > 0) {
      const double val = mlp_loss_and_grad(model, state.params, Zv, target_v, nullptr);
      if (val < best_val) {
        best_val = val;
        best_params = state.params;
      }
    }
  }
  model.params() = n_val > 0 && best_params.size() > 0 ? std::move(best_params) : std::move(state.params);
  return fit;
}

inline MlpModel fit_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const MlpConfig& config,
                        const Standardizer* scaling = nullptr) {
  return fit_mlp_traced(X, y, config, scaling).model;
}

inline Eigen::VectorXd predict(const MlpModel& model, const Eigen::MatrixXd& X) { return model.predict(X); }

/// Treated- and control-arm outcome regressions for one source; CATE is their difference.
struct SourceCate {
  MlpModel f1;
  MlpModel f0;

  int input_dim() const { return f1.input_dim(); }

  Eigen::VectorXd cate(const Eigen::MatrixXd& X) const { return f1.predict(X) - f0.predict(X); }
};

inline SourceCate estimate_source_cate(const Dataset& data, const MlpConfig& config) {
  if (!data.has_labels()) throw InputError("CATE estimation needs treatment and outcome columns");
  const auto treated = data.indices_with_treatment(1);
  const auto control = data.indices_with_treatment(0);
  if (treated.size() < 2 || control.size() < 2) {
    throw ArmCoverageError("each treatment arm needs at least 2 rows (treated " +
                           std::to_string(treated.size()) + ", control " + std::to_string(control.size()) +
                           ")");
  }
  // Both arms share one standardization computed on the whole source sample.
  const Standardizer scaling = Standardizer::fit(data.X);
  const Dataset d1 = data.subset(treated);
  const Dataset d0 = data.subset(control);
  MlpConfig c1 = config;
  MlpConfig c0 = config;
  c1.seed = splitmix64(config.seed ^ 0x7431ULL);
  c0.seed = splitmix64(config.seed ^ 0x7430ULL);
  return {fit_mlp(d1.X, d1.Y, c1, &scaling), fit_mlp(d0.X, d0.Y, c0, &scaling)};
}

// JSON: layer widths, per-layer row-major weights (out x in), biases, scaling.
inline nlohmann::json to_json(const MlpModel& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const auto W = m.weight(l, m.params());
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(W.size()));
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) w.push_back(W(i, j));
    }
    const auto b = m.bias(l, m.params());
    layers.push_back({{"weights", w}, {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  const auto& s = m.input_scaling();
  return {{"widths", m.widths()},
          {"layers", layers},
          {"input_mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"input_scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())},
          {"target_mean", m.target_mean()},
          {"target_scale", m.target_scale()},
          {"output_bound", m.output_bound()}};
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  try {
    MlpModel m(j.at("widths").get<std::vector<int>>(), j.at("output_bound").get<double>());
    const auto& layers = j.at("layers");
    if (layers.size() != m.num_layers()) throw InputError("MLP JSON layer count mismatch");
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      const auto w = layers[l].at("weights").get<std::vector<double>>();
      const auto b = layers[l].at("bias").get<std::vector<double>>();
      auto W = m.weight(l, m.params());
      if (static_cast<Eigen::Index>(w.size()) != W.size() || static_cast<Eigen::Index>(b.size()) != W.rows()) {
        throw InputError("MLP JSON layer " + std::to_string(l) + " has the wrong size");
      }
      for (Eigen::Index i = 0; i < W.rows(); ++i) {
        for (Eigen::Index k = 0; k < W.cols(); ++k) W(i, k) = w[static_cast<std::size_t>(i * W.cols() + k)];
      }
      m.bias(l, m.params()) = Eigen::Map<const Eigen::VectorXd>(b.data(), W.rows());
    }
    const auto mean = j.at("input_mean").get<std::vector<double>>();
    const auto scale = j.at("input_scale").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != m.input_dim() || static_cast<int>(scale.size()) != m.input_dim()) {
      throw InputError("MLP JSON standardization width mismatch");
    }
    m.input_scaling().mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), m.input_dim());
    m.input_scaling().scale = Eigen::Map<const Eigen::RowVectorXd>(scale.data(), m.input_dim());
    m.target_mean() = j.at("target_mean").get<double>();
    m.target_scale() = j.at("target_scale").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed MLP JSON: ") + e.what());
  }
}

}  // namespace pdro
