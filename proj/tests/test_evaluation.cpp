#include <gtest/gtest.h>

#include <cmath>

#include "pdro/evaluation.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using pdro::SimplexVector;

namespace {

struct ConstantPolicy {
  double score = 1.0;
  VectorXd scores(const MatrixXd& X) const { return VectorXd::Constant(X.rows(), score); }
  std::vector<int> decisions(const MatrixXd& X) const { return pdro::decisions_from_scores(scores(X)); }
};

// Treats exactly when the Scenario 1 target signal is positive.
struct OraclePolicy {
  pdro::ScenarioSpec spec;
  double delta;
  SimplexVector rho;
  VectorXd scores(const MatrixXd& X) const { return pdro::target_signal(spec, X, delta, rho); }
  std::vector<int> decisions(const MatrixXd& X) const { return pdro::decisions_from_scores(scores(X)); }
};

pdro::MlpModel constant_model(int p, double c) {
  pdro::MlpModel m({p, 1}, 200.0);
  m.bias(0, m.params())[0] = c;
  return m;
}

pdro::NuisanceSet constant_nuisance(const std::vector<double>& cates, int p = 2) {
  pdro::NuisanceSet n;
  for (double c : cates) n.cates.push_back({constant_model(p, c), constant_model(p, 0.0)});
  n.membership = pdro::SoftmaxModel(MatrixXd::Zero(static_cast<Eigen::Index>(cates.size()), p), false);
  return n;
}

}  // namespace

TEST(EmpiricalPolicyValue, Examples) {
  const MatrixXd X = MatrixXd::Zero(3, 1);
  const VectorXd oracle = Eigen::Vector3d(1.0, -1.0, 2.0);
  EXPECT_NEAR(pdro::policy_value_from_decisions({1, 1, 1}, oracle), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(pdro::policy_value_from_decisions({0, 0, 0}, oracle), 0.0);
  EXPECT_EQ(pdro::empirical_policy_value(ConstantPolicy{1.0}, X, [](const Eigen::RowVectorXd&) { return 2.5; }), 2.5);
  EXPECT_EQ(pdro::empirical_policy_value(ConstantPolicy{-1.0}, X, [](const Eigen::RowVectorXd&) { return 2.5; }), 0.0);
}

TEST(EmpiricalPolicyValue, EmptyTestSetIsInputError) {
  EXPECT_THROW(pdro::empirical_policy_value(ConstantPolicy{}, MatrixXd(0, 2), [](const auto&) { return 1.0; }),
               pdro::InputError);
  EXPECT_THROW(pdro::policy_value_from_decisions({}, VectorXd(0)), pdro::InputError);
}

TEST(EmpiricalPolicyValue, LinearInOracle) {
  const auto spec = pdro::scenario(1);
  const MatrixXd X = pdro::gen_target(spec, 300, 0.5, SimplexVector::uniform(3), 1, false).X;
  const OraclePolicy policy{spec, 0.2, SimplexVector{0.5, 0.3, 0.2}};
  auto oracle = [&](const Eigen::RowVectorXd& x) { return pdro::scenario_f(spec, 2, x); };
  const double base = pdro::empirical_policy_value(policy, X, oracle);
  const double scaled = pdro::empirical_policy_value(policy, X, [&](const auto& x) { return 3.5 * oracle(x); });
  EXPECT_NEAR(scaled, 3.5 * base, 1e-12);
}

TEST(WorstCaseValue, SingleDrawEqualsItsValue) {
  const auto spec = pdro::scenario(1);
  const OraclePolicy policy{spec, 0.5, SimplexVector::uniform(3)};
  const auto eval = pdro::WorstCaseEvaluator::sample(spec, 0.5, 500, 1, 1.0, 3);
  const double direct = pdro::policy_value_from_decisions(policy.decisions(eval.X_test()),
                                                          pdro::true_target_cates(spec, eval.X_test(), 0.5,
                                                                                  eval.draws().front()));
  EXPECT_DOUBLE_EQ(eval.worst(policy), direct);
  EXPECT_DOUBLE_EQ(pdro::worst_case_value(policy, spec, 0.5, 500, 1, 1.0, 3), direct);
}

TEST(WorstCaseValue, DeltaOneMakesDrawsIrrelevant) {
  const auto spec = pdro::scenario(2);
  const OraclePolicy policy{spec, 1.0, SimplexVector::uniform(3)};
  const auto eval = pdro::WorstCaseEvaluator::sample(spec, 1.0, 400, 25, 1.0, 4);
  const auto values = eval.values(policy.decisions(eval.X_test()));
  for (double v : values) EXPECT_NEAR(v, values.front(), 1e-12);
}

TEST(WorstCaseValue, MoreDrawsNeverIncreaseTheMinimum) {
  const auto spec = pdro::scenario(1);
  const OraclePolicy policy{spec, 0.3, SimplexVector{0.2, 0.2, 0.6}};
  const auto few = pdro::WorstCaseEvaluator::sample(spec, 0.75, 500, 10, 1.0, 5);
  const auto many = pdro::WorstCaseEvaluator::sample(spec, 0.75, 500, 60, 1.0, 5);
  ASSERT_EQ(few.X_test(), many.X_test());
  for (std::size_t i = 0; i < few.draws().size(); ++i) EXPECT_EQ(few.draws()[i], many.draws()[i]);
  EXPECT_LE(many.worst(policy), few.worst(policy));
}

TEST(WorstCaseValue, BelowUniformValueWhenUniformIsADraw) {
  const auto spec = pdro::scenario(1);
  auto draws = pdro::sample_dirichlet_many(3, 1.0, 30, 6);
  draws.push_back(SimplexVector::uniform(3));
  const MatrixXd X = pdro::gen_target(spec, 400, 0.5, SimplexVector::uniform(3), 6, false).X;
  const pdro::WorstCaseEvaluator eval(spec, 0.75, X, draws);
  const OraclePolicy policy{spec, 0.0, SimplexVector{0.6, 0.2, 0.2}};
  const auto d = policy.decisions(X);
  EXPECT_LE(eval.worst(d), pdro::policy_value_from_decisions(d, eval.cate(SimplexVector::uniform(3))));
}

TEST(WorstCaseValue, RejectsNoDraws) {
  EXPECT_THROW(pdro::WorstCaseEvaluator::sample(pdro::scenario(1), 0.5, 10, 0, 1.0, 1), pdro::ParameterError);
}

TEST(DoublyRobust, TrivialExamples) {
  const std::vector<int> A = {1, 0, 1, 1, 0};
  const VectorXd Y = (VectorXd(5) << 1.0, -2.0, 0.5, 3.0, 4.0).finished();
  const VectorXd pi = VectorXd::Constant(5, 0.5);
  const VectorXd zero = VectorXd::Zero(5);
  EXPECT_NEAR(pdro::doubly_robust_value(A, A, Y, pi, zero, zero), 2.0 * Y.mean(), 1e-15);
  std::vector<int> flipped;
  for (int a : A) flipped.push_back(1 - a);
  EXPECT_EQ(pdro::doubly_robust_value(flipped, A, Y, pi, zero, zero), 0.0);
}

TEST(DoublyRobust, PositivityViolations) {
  const std::vector<int> A = {1, 0};
  const VectorXd Y = VectorXd::Ones(2), z = VectorXd::Zero(2);
  EXPECT_THROW(pdro::doubly_robust_value(A, A, Y, Eigen::Vector2d(0.5, 0.0), z, z), pdro::PositivityError);
  EXPECT_THROW(pdro::doubly_robust_value(A, A, Y, Eigen::Vector2d(1.0, 0.5), z, z), pdro::PositivityError);
  EXPECT_THROW(pdro::doubly_robust_value(A, A, Y, Eigen::Vector3d(0.5, 0.5, 0.5), z, z), pdro::DimensionError);
}

TEST(DoublyRobust, OracleEstimateNearTrueValue) {
  const auto spec = pdro::scenario(1);
  const SimplexVector rho = SimplexVector::uniform(3);
  const double delta = 0.75;
  const OraclePolicy policy{spec, delta, rho};
  // The estimand is E[Y(d)] = E[g (2 d - 1)], which for d = 1{g > 0} is E|g|.
  const MatrixXd Xmc = pdro::gen_target(spec, 1000000, delta, rho, 123, false).X;
  const double truth = pdro::target_signal(spec, Xmc, delta, rho).cwiseAbs().mean();

  const pdro::Dataset data = pdro::gen_target(spec, 5000, delta, rho, 11, true);
  const auto est = pdro::doubly_robust_value(
      policy, data, [](int, const Eigen::RowVectorXd&) { return 0.5; },
      [&](const Eigen::RowVectorXd& x) { return pdro::target_signal(spec, MatrixXd(x), delta, rho)[0]; },
      [&](const Eigen::RowVectorXd& x) { return -pdro::target_signal(spec, MatrixXd(x), delta, rho)[0]; });
  EXPECT_NEAR(est, truth, 0.05);
}

TEST(Propensity, IndependentTreatmentRecoversMarginalRate) {
  const auto spec = pdro::scenario(1);
  pdro::Dataset data = pdro::gen_target(spec, 4000, 0.5, SimplexVector::uniform(3), 12, true);
  pdro::CounterRng rng(12, pdro::Stream::kShuffle);
  for (auto& a : data.A) a = rng.uniform() < 0.3 ? 1 : 0;
  double rate = 0;
  for (int a : data.A) rate += a;
  rate /= static_cast<double>(data.A.size());
  const auto model = pdro::fit_propensity(data);
  const VectorXd p = model.treated(data.X);
  EXPECT_LT((p.array() - rate).abs().maxCoeff(), 0.05);
  EXPECT_EQ(model.clip_fraction(data.X), 0.0);
}

TEST(Propensity, ClipsExtremeScores) {
  pdro::Dataset data;
  data.X = MatrixXd(200, 1);
  for (Eigen::Index i = 0; i < 200; ++i) {
    data.X(i, 0) = (i - 100) / 10.0;
    data.A.push_back(i >= 100 ? 1 : 0);
  }
  data.Y = VectorXd::Zero(200);
  const auto model = pdro::fit_propensity(data);
  const VectorXd p = model.treated(data.X);
  EXPECT_GE(p.minCoeff(), 0.01);
  EXPECT_LE(p.maxCoeff(), 0.99);
  EXPECT_GT(model.clip_fraction(data.X), 0.5);
}

TEST(NaivePolicy, Examples) {
  const Eigen::RowVectorXd x = Eigen::RowVector2d(0.0, 0.0);
  EXPECT_EQ(pdro::decide(pdro::naive_policy(constant_nuisance({1.0, -2.0}), {10, 10}), x), 0);
  EXPECT_NEAR(pdro::naive_policy(constant_nuisance({1.0, -2.0}), {10, 10}).scores(MatrixXd(x))[0], -0.5, 1e-15);
  EXPECT_EQ(pdro::decide(pdro::naive_policy(constant_nuisance({0.3}), {7}), x), 1);
  EXPECT_EQ(pdro::decide(pdro::naive_policy(constant_nuisance({-0.3}), {7}), x), 0);
  const auto weighted = pdro::naive_policy(constant_nuisance({1.0, -2.0}), {3, 1});
  EXPECT_NEAR(weighted.scores(MatrixXd(x))[0], 0.25, 1e-15);
  EXPECT_EQ(pdro::decide(weighted, x), 1);
}

TEST(NaivePolicy, RejectsBadSizes) {
  EXPECT_THROW(pdro::naive_policy(constant_nuisance({1.0, -2.0}), {0, 0}), pdro::InputError);
  EXPECT_THROW(pdro::naive_policy(constant_nuisance({1.0, -2.0}), {1}), pdro::DimensionError);
}
