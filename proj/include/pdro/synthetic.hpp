#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pdro/dataset.hpp"
#include "pdro/error.hpp"
#include "pdro/rng.hpp"
#include "pdro/simplex.hpp"

namespace pdro {

/// One of the four benchmark designs: three sources, softmax source membership with
/// fixed coefficients, and outcomes Y = f_s(X)(2A - 1) + N(0, 1).
struct ScenarioSpec {
  int id = 1;
  int dim_p = 5;
  Eigen::MatrixXd beta_true;  // 3 x p; rows beyond column 5 are zero
  double noise_sd = 1.0;

  static constexpr int kNumSources = 3;
  static constexpr double kTruncation = 10.0;
};

inline ScenarioSpec scenario(int id) {
  if (id < 1 || id > 4) throw ParameterError("scenario must be 1, 2, 3 or 4, got " + std::to_string(id));
  ScenarioSpec spec;
  spec.id = id;
  spec.dim_p = id <= 2 ? 5 : 30;
  spec.beta_true = Eigen::MatrixXd::Zero(ScenarioSpec::kNumSources, spec.dim_p);
  spec.beta_true.row(0).head(5) << -3, 2, 1, 0, 0;
  spec.beta_true.row(1).head(5) << 1, -1, 3, 0, -1;
  spec.beta_true.row(2).head(5) << 1, 0, 0, -1, 2;
  return spec;
}

/// Source outcome function f_s(x); s is 1-based.
inline double scenario_f(const ScenarioSpec& spec, int s, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  if (s < 1 || s > ScenarioSpec::kNumSources) {
    throw ParameterError("source index must be 1..3, got " + std::to_string(s));
  }
  if (x.size() != spec.dim_p) throw DimensionError("covariate vector has the wrong dimension for this scenario");
  const double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3], x5 = x[4];
  switch (spec.id * 10 + s) {
    case 11: return 3 * x1 + x3 + x4 - x5;
    case 12: return x1 - x2 - 2 * x3 + x4 + x5;
    case 13: return x1 + 2 * x2 + x3 - x4 + x5;
    case 21: return -std::sin(x1) + std::exp(x2 / 10) - (x3 - x4) * (x3 - x4) + x5 * x5 * x5;
    case 22: return std::sin(x1) - x2 * x3 - x3 * x3 + x4 * x4 - std::max(0.0, x5);
    case 23: return -2 * x1 - x2 * x2 + x3 * x3 - x4 + std::abs(x5);
    case 31: return x1 + x2 + x3 + x4 - 3 * x5;
    case 32: return x1 - 2 * x2 + 2 * x3 + x4 + 3 * x5;
    case 33: return x1 + x2 + x3 - x4;
    case 41: return std::sin(x1) + std::exp(x2 + x3) + (x4 - 3 * x5) * (x4 - 3 * x5) + 3 * x[5];
    case 42: return std::max(0.0, x1 * x2) + x3 - x4 + x5 * x5;
    case 43: return -5 * x1 - x2 * x2 * x2 - (x3 - x4) * (x3 - x4) + std::abs(x5);
    default: throw ParameterError("invalid scenario/source pair");
  }
}

/// n x 3 matrix of f_s evaluated at each row.
inline Eigen::MatrixXd scenario_f_matrix(const ScenarioSpec& spec, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd F(X.rows(), ScenarioSpec::kNumSources);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (int s = 1; s <= ScenarioSpec::kNumSources; ++s) F(i, s - 1) = scenario_f(spec, s, X.row(i));
  }
  return F;
}

inline Eigen::MatrixXd true_membership_matrix(const ScenarioSpec& spec, const Eigen::MatrixXd& X) {
  if (X.cols() != spec.dim_p) throw DimensionError("covariate matrix has the wrong dimension for this scenario");
  Eigen::MatrixXd logits = X * spec.beta_true.transpose();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    logits.row(i) = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

inline SimplexVector true_membership(const ScenarioSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return SimplexVector::normalized(true_membership_matrix(spec, Eigen::MatrixXd(x)).row(0).transpose());
}

/// g(x) = delta sum_s omega_s(x) f_s(x) + (1 - delta) sum_s rho_s f_s(x), per row.
inline Eigen::VectorXd target_signal(const ScenarioSpec& spec, const Eigen::MatrixXd& X, double delta,
                                     const SimplexVector& rho) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw ParameterError("delta must lie in [0, 1]");
  if (rho.size() != ScenarioSpec::kNumSources) throw DimensionError("rho must have 3 entries");
  const Eigen::MatrixXd F = scenario_f_matrix(spec, X);
  const Eigen::MatrixXd W = true_membership_matrix(spec, X);
  return delta * W.cwiseProduct(F).rowwise().sum() + (1.0 - delta) * (F * rho.weights());
}

/// Y(1) = g + e and Y(0) = -g + e, so the target CATE is 2 g(x).
inline double true_target_cate(const ScenarioSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                               double delta, const SimplexVector& rho) {
  return 2.0 * target_signal(spec, Eigen::MatrixXd(x), delta, rho)[0];
}

inline Eigen::VectorXd true_target_cates(const ScenarioSpec& spec, const Eigen::MatrixXd& X, double delta,
                                         const SimplexVector& rho) {
  return 2.0 * target_signal(spec, X, delta, rho);
}

enum class SourceSampling {
  kEqualQuota,  // keep drawing until every source has its quota
  kNatural,     // draw n * |S| rows and keep whatever labels come out
};

struct GenOptions {
  SourceSampling sampling = SourceSampling::kEqualQuota;
  std::optional<int> force_treatment;
  bool zero_noise = false;
};

namespace detail {

inline Eigen::RowVectorXd draw_covariates(CounterRng& rng, int p) {
  Eigen::RowVectorXd x(p);
  for (int j = 0; j < p; ++j) {
    double v = 0.0;
    do {
      v = rng.normal();
    } while (std::abs(v) > ScenarioSpec::kTruncation);
    x[j] = v;
  }
  return x;
}

inline int draw_categorical(CounterRng& rng, const Eigen::Ref<const Eigen::RowVectorXd>& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace detail

/// Labeled source rows. Covariates are drawn from the unconditional law, the source
/// label from the true membership probabilities, then outcomes from that source's
/// model. Rows are grouped by source in label order.
inline Dataset gen_source(const ScenarioSpec& spec, int n_per_source, std::uint64_t seed,
                          const GenOptions& options = {}) {
  if (n_per_source < 1) throw ParameterError("n_per_source must be at least 1");
  constexpr int K = ScenarioSpec::kNumSources;
  CounterRng x_rng(seed, Stream::kCovariates);
  CounterRng s_rng(seed, Stream::kMembership);
  CounterRng a_rng(seed, Stream::kTreatment);
  CounterRng e_rng(seed, Stream::kNoise);

  std::vector<std::vector<Eigen::RowVectorXd>> rows(K);
  std::vector<int> natural_labels;
  const auto total = static_cast<std::size_t>(n_per_source) * K;
  std::size_t kept = 0;
  while (kept < total) {
    Eigen::RowVectorXd x = detail::draw_covariates(x_rng, spec.dim_p);
    const Eigen::RowVectorXd w = true_membership_matrix(spec, Eigen::MatrixXd(x)).row(0);
    const int s = detail::draw_categorical(s_rng, w);
    if (options.sampling == SourceSampling::kEqualQuota &&
        rows[static_cast<std::size_t>(s)].size() >= static_cast<std::size_t>(n_per_source)) {
      continue;
    }
    rows[static_cast<std::size_t>(s)].push_back(std::move(x));
    ++kept;
  }

  Dataset data;
  data.X.resize(static_cast<Eigen::Index>(total), spec.dim_p);
  data.Y.resize(static_cast<Eigen::Index>(total));
  Eigen::Index i = 0;
  for (int s = 0; s < K; ++s) {
    for (const auto& x : rows[static_cast<std::size_t>(s)]) {
      const int a = options.force_treatment ? *options.force_treatment : (a_rng.bernoulli(0.5) ? 1 : 0);
      const double eps = e_rng.normal() * spec.noise_sd;
      data.X.row(i) = x;
      data.A.push_back(a);
      data.S.push_back(s + 1);
      data.Y[i] = scenario_f(spec, s + 1, x) * (2 * a - 1) + (options.zero_noise ? 0.0 : eps);
      ++i;
    }
  }
  return data;
}

/// Target rows from the latent-mixture outcome model. Without labels only X is filled.
inline Dataset gen_target(const ScenarioSpec& spec, int n, double delta, const SimplexVector& rho,
                          std::uint64_t seed, bool with_labels, const GenOptions& options = {}) {
  if (n < 0) throw ParameterError("n must be nonnegative");
  if (!(delta >= 0.0 && delta <= 1.0)) throw ParameterError("delta must lie in [0, 1]");
  if (rho.size() != ScenarioSpec::kNumSources) throw DimensionError("rho must have 3 entries");
  CounterRng x_rng(seed, Stream::kTarget);
  CounterRng a_rng(seed, Stream::kTreatment);
  CounterRng e_rng(seed, Stream::kNoise);
  Dataset data;
  data.X.resize(n, spec.dim_p);
  for (int i = 0; i < n; ++i) data.X.row(i) = detail::draw_covariates(x_rng, spec.dim_p);
  if (!with_labels) return data;
  const Eigen::VectorXd g = target_signal(spec, data.X, delta, rho);
  data.Y.resize(n);
  for (int i = 0; i < n; ++i) {
    const int a = options.force_treatment ? *options.force_treatment : (a_rng.bernoulli(0.5) ? 1 : 0);
    const double eps = e_rng.normal() * spec.noise_sd;
    data.A.push_back(a);
    data.Y[i] = g[i] * (2 * a - 1) + (options.zero_noise ? 0.0 : eps);
  }
  return data;
}

inline SimplexVector sample_dirichlet(int k, double alpha, CounterRng& rng) {
  if (k < 2) throw ParameterError("Dirichlet dimension must be at least 2");
  if (!(alpha > 0.0)) throw ParameterError("Dirichlet concentration must be positive");
  Eigen::VectorXd g(k);
  do {
    for (int i = 0; i < k; ++i) g[i] = rng.gamma(alpha);
  } while (!(g.sum() > 0.0));
  return SimplexVector::normalized(std::move(g));
}

inline SimplexVector sample_dirichlet(int k, double alpha, std::uint64_t seed) {
  CounterRng rng(seed, Stream::kDirichlet);
  return sample_dirichlet(k, alpha, rng);
}

inline std::vector<SimplexVector> sample_dirichlet_many(int k, double alpha, int count, std::uint64_t seed) {
  CounterRng rng(seed, Stream::kDirichlet);
  std::vector<SimplexVector> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(sample_dirichlet(k, alpha, rng));
  return out;
}

}  // namespace pdro
