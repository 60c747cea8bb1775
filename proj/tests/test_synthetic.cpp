#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdro/learner.hpp"
#include "pdro/synthetic.hpp"

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using pdro::SimplexVector;

namespace {

RowVectorXd unit(int p, int j, double v = 1.0) {
  RowVectorXd x = RowVectorXd::Zero(p);
  x[j] = v;
  return x;
}

}  // namespace

TEST(Scenario, DimensionsAndBeta) {
  const int dims[] = {5, 5, 30, 30};
  for (int id = 1; id <= 4; ++id) {
    const auto spec = pdro::scenario(id);
    EXPECT_EQ(spec.dim_p, dims[id - 1]);
    EXPECT_EQ(spec.beta_true.rows(), 3);
    EXPECT_EQ(spec.beta_true.cols(), spec.dim_p);
    EXPECT_EQ(spec.beta_true(0, 0), -3.0);
    EXPECT_EQ(spec.beta_true(2, 4), 2.0);
  }
  EXPECT_THROW(pdro::scenario(0), pdro::ParameterError);
  EXPECT_THROW(pdro::scenario(5), pdro::ParameterError);
}

TEST(ScenarioF, Examples) {
  EXPECT_EQ(pdro::scenario_f(pdro::scenario(1), 1, unit(5, 0)), 3.0);
  EXPECT_EQ(pdro::scenario_f(pdro::scenario(2), 3, RowVectorXd::Zero(5)), 0.0);
  RowVectorXd x = RowVectorXd::Zero(30);
  x[0] = 1.0;
  x[1] = -1.0;
  EXPECT_EQ(pdro::scenario_f(pdro::scenario(4), 2, x), 0.0);
  EXPECT_THROW(pdro::scenario_f(pdro::scenario(1), 4, unit(5, 0)), pdro::ParameterError);
  EXPECT_THROW(pdro::scenario_f(pdro::scenario(1), 0, unit(5, 0)), pdro::ParameterError);
  EXPECT_THROW(pdro::scenario_f(pdro::scenario(3), 1, unit(5, 0)), pdro::DimensionError);
}

TEST(ScenarioF, ScenarioOneVanishesAtOrigin) {
  for (int s = 1; s <= 3; ++s) EXPECT_EQ(pdro::scenario_f(pdro::scenario(1), s, RowVectorXd::Zero(5)), 0.0);
}

TEST(ScenarioF, MoreFormulaSpotChecks) {
  RowVectorXd x(5);
  x << 0.5, -1.0, 2.0, 1.5, -0.7;
  const auto s2 = pdro::scenario(2);
  EXPECT_DOUBLE_EQ(pdro::scenario_f(s2, 1, x),
                   -std::sin(0.5) + std::exp(-0.1) - 0.25 + std::pow(-0.7, 3));
  EXPECT_DOUBLE_EQ(pdro::scenario_f(s2, 2, x), std::sin(0.5) + 2.0 - 4.0 + 2.25 - 0.0);
  RowVectorXd y = RowVectorXd::Zero(30);
  y.head(6) << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
  EXPECT_DOUBLE_EQ(pdro::scenario_f(pdro::scenario(4), 1, y),
                   std::sin(0.1) + std::exp(0.5) + std::pow(0.4 - 1.5, 2) + 1.8);
  EXPECT_DOUBLE_EQ(pdro::scenario_f(pdro::scenario(3), 2, y), 0.1 - 0.4 + 0.6 + 0.4 + 1.5);
}

TEST(TrueMembership, Examples) {
  const auto spec = pdro::scenario(1);
  const auto w0 = pdro::true_membership(spec, RowVectorXd::Zero(5));
  for (Eigen::Index s = 0; s < 3; ++s) EXPECT_NEAR(w0[s], 1.0 / 3.0, 1e-15);

  const double z = std::exp(-3.0) + 2.0 * std::exp(1.0);
  const auto w = pdro::true_membership(spec, unit(5, 0));
  EXPECT_NEAR(w[0], std::exp(-3.0) / z, 1e-15);
  EXPECT_NEAR(w[1], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(w[0], 0.00907, 5e-6);
  EXPECT_NEAR(w[1], 0.49546, 5e-6);
  EXPECT_NEAR(w[2], 0.49546, 5e-6);
}

TEST(TrueTargetCate, Examples) {
  const auto spec = pdro::scenario(1);
  EXPECT_EQ(pdro::true_target_cate(spec, RowVectorXd::Zero(5), 0.3, SimplexVector{0.2, 0.3, 0.5}), 0.0);
  EXPECT_DOUBLE_EQ(pdro::true_target_cate(spec, unit(5, 0), 0.0, SimplexVector{1.0, 0.0, 0.0}), 6.0);
  const auto w = pdro::true_membership(spec, unit(5, 0));
  const double expected = 2.0 * (3.0 * w[0] + w[1] + w[2]);
  EXPECT_NEAR(pdro::true_target_cate(spec, unit(5, 0), 1.0, SimplexVector::uniform(3)), expected, 1e-14);
  EXPECT_NEAR(expected, 2.0363, 1e-4);
}

TEST(TrueTargetCate, EqualsOracleRobustScore) {
  for (int id = 1; id <= 4; ++id) {
    const auto spec = pdro::scenario(id);
    const MatrixXd X = pdro::gen_target(spec, 200, 0.5, SimplexVector::uniform(3), 40 + id, false).X;
    const SimplexVector rho{0.1, 0.6, 0.3};
    pdro::ScoreInputs in;
    in.cate = 2.0 * pdro::scenario_f_matrix(spec, X);
    in.membership = pdro::true_membership_matrix(spec, X);
    for (double delta : {0.0, 0.25, 1.0}) {
      const VectorXd a = pdro::robust_scores(in, rho, delta);
      const VectorXd b = pdro::true_target_cates(spec, X, delta, rho);
      EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12) << "scenario " << id;
    }
  }
}

TEST(GenSource, TreatmentRateAndQuotas) {
  const pdro::Dataset d = pdro::gen_source(pdro::scenario(1), 3334, 1);
  double treated = 0;
  for (int a : d.A) treated += a;
  EXPECT_NEAR(treated / static_cast<double>(d.rows()), 0.5, 0.03);
  for (int s = 1; s <= 3; ++s) EXPECT_EQ(d.indices_with_source(s).size(), 3334u);
  EXPECT_LE(d.X.cwiseAbs().maxCoeff(), 10.0);
}

TEST(GenSource, ForcedTreatmentAndNoNoiseGivesF) {
  const auto spec = pdro::scenario(2);
  pdro::GenOptions opt;
  opt.force_treatment = 1;
  opt.zero_noise = true;
  const pdro::Dataset d = pdro::gen_source(spec, 50, 2, opt);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    EXPECT_EQ(d.Y[i], pdro::scenario_f(spec, d.S[static_cast<std::size_t>(i)], d.X.row(i)));
  }
}

TEST(GenSource, Reproducible) {
  const auto spec = pdro::scenario(3);
  const pdro::Dataset a = pdro::gen_source(spec, 40, 9);
  const pdro::Dataset b = pdro::gen_source(spec, 40, 9);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.Y, b.Y);
  EXPECT_EQ(a.A, b.A);
  EXPECT_EQ(a.S, b.S);
  EXPECT_NE(pdro::gen_source(spec, 40, 10).X, a.X);
}

TEST(GenSource, NaturalClassProportionsMatchExpectedMembership) {
  const auto spec = pdro::scenario(1);
  // Monte Carlo oracle of E[omega_s(X)] from 10^6 unconditional draws.
  const MatrixXd Xmc = pdro::gen_target(spec, 1000000, 0.5, SimplexVector::uniform(3), 777, false).X;
  const VectorXd expected = pdro::true_membership_matrix(spec, Xmc).colwise().mean().transpose();

  pdro::GenOptions opt;
  opt.sampling = pdro::SourceSampling::kNatural;
  const pdro::Dataset d = pdro::gen_source(spec, 20000 / 3 + 1, 3, opt);
  for (int s = 1; s <= 3; ++s) {
    const double share = static_cast<double>(d.indices_with_source(s).size()) / static_cast<double>(d.rows());
    EXPECT_NEAR(share, expected[s - 1], 0.02) << "source " << s;
  }
}

TEST(GenSource, ConditionalLabelFrequenciesByDecile) {
  const auto spec = pdro::scenario(1);
  pdro::GenOptions opt;
  opt.sampling = pdro::SourceSampling::kNatural;
  const pdro::Dataset d = pdro::gen_source(spec, 50000 / 3 + 1, 4, opt);
  const VectorXd w1 = pdro::true_membership_matrix(spec, d.X).col(0);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return w1[a] < w1[b]; });
  const std::size_t bin = order.size() / 10;
  for (int b = 0; b < 10; ++b) {
    double hits = 0.0, mean_w = 0.0;
    const std::size_t lo = b * bin, hi = b == 9 ? order.size() : (b + 1) * bin;
    for (std::size_t k = lo; k < hi; ++k) {
      hits += d.S[static_cast<std::size_t>(order[k])] == 1;
      mean_w += w1[order[k]];
    }
    const auto count = static_cast<double>(hi - lo);
    EXPECT_NEAR(hits / count, mean_w / count, 0.03) << "decile " << b;
  }
}

TEST(GenTarget, DeltaZeroPointMassMatchesSourceOneModel) {
  const auto spec = pdro::scenario(1);
  pdro::GenOptions opt;
  opt.zero_noise = true;
  const pdro::Dataset d = pdro::gen_target(spec, 100, 0.0, SimplexVector{1.0, 0.0, 0.0}, 5, true, opt);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const int a = d.A[static_cast<std::size_t>(i)];
    EXPECT_DOUBLE_EQ(d.Y[i], pdro::scenario_f(spec, 1, d.X.row(i)) * (2 * a - 1));
  }
}

TEST(GenTarget, OriginGivesZeroOutcome) {
  const auto spec = pdro::scenario(1);
  const SimplexVector rho{0.2, 0.5, 0.3};
  EXPECT_EQ(pdro::target_signal(spec, MatrixXd::Zero(1, 5), 0.6, rho)[0], 0.0);
}

TEST(GenTarget, OutcomeMeanIsZeroBySymmetry) {
  const pdro::Dataset d = pdro::gen_target(pdro::scenario(1), 50000, 0.75, SimplexVector::uniform(3), 6, true);
  const double se = std::sqrt((d.Y.array() - d.Y.mean()).square().mean() / static_cast<double>(d.rows()));
  EXPECT_NEAR(d.Y.mean(), 0.0, std::max(0.02, 3.0 * se));
  EXPECT_FALSE(pdro::gen_target(pdro::scenario(1), 10, 0.75, SimplexVector::uniform(3), 6, false).has_labels());
}

TEST(GenTarget, Reproducible) {
  const auto spec = pdro::scenario(4);
  const auto a = pdro::gen_target(spec, 30, 0.2, SimplexVector{0.5, 0.25, 0.25}, 1, true);
  const auto b = pdro::gen_target(spec, 30, 0.2, SimplexVector{0.5, 0.25, 0.25}, 1, true);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.Y, b.Y);
}

TEST(Dirichlet, DrawsOnSimplex) {
  const auto draws = pdro::sample_dirichlet_many(4, 0.3, 500, 1);
  for (const auto& d : draws) {
    EXPECT_NEAR(d.weights().sum(), 1.0, 1e-10);
    EXPECT_TRUE((d.weights().array() >= 0.0).all());
  }
}

TEST(Dirichlet, MarginalMeans) {
  const auto draws = pdro::sample_dirichlet_many(3, 1.0, 100000, 2);
  VectorXd mean = VectorXd::Zero(3);
  for (const auto& d : draws) mean += d.weights();
  mean /= 100000.0;
  for (Eigen::Index s = 0; s < 3; ++s) EXPECT_NEAR(mean[s], 1.0 / 3.0, 0.01);
}

TEST(Dirichlet, LargeAlphaConcentrates) {
  double worst = 0.0;
  for (const auto& d : pdro::sample_dirichlet_many(3, 1e4, 100, 3)) {
    worst = std::max(worst, (d.weights().array() - 1.0 / 3.0).abs().maxCoeff());
  }
  EXPECT_LE(worst, 0.05);
}

TEST(Dirichlet, InvalidArguments) {
  EXPECT_THROW(pdro::sample_dirichlet(3, 0.0, std::uint64_t{1}), pdro::ParameterError);
  EXPECT_THROW(pdro::sample_dirichlet(3, -1.0, std::uint64_t{1}), pdro::ParameterError);
  EXPECT_THROW(pdro::sample_dirichlet(1, 1.0, std::uint64_t{1}), pdro::ParameterError);
}
