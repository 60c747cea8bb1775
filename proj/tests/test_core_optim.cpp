#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pdro/optim.hpp"
#include "pdro/rng.hpp"

using pdro::AdamHyper;
using pdro::AdamState;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

AdamHyper hyper(double lr) {
  AdamHyper h;
  h.learning_rate = lr;
  return h;
}

}  // namespace

TEST(AdamUpdate, ZeroGradientIsFixedPoint) {
  const AdamState next = pdro::adam_update(AdamState(vec({1.0})), vec({0.0}), hyper(0.3));
  EXPECT_EQ(next.params[0], 1.0);
  EXPECT_EQ(next.m[0], 0.0);
  EXPECT_EQ(next.v[0], 0.0);
  EXPECT_EQ(next.step_count, 1);
}

TEST(AdamUpdate, FirstStepMovesByLearningRate) {
  const AdamState next = pdro::adam_update(AdamState(vec({1.0})), vec({2.0}), hyper(0.1));
  // m_hat = 2, v_hat = 4, so the step is 0.1 * 2 / (2 + 1e-8).
  EXPECT_NEAR(next.params[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(next.params[0], 0.9, 1e-8);
}

TEST(AdamUpdate, TwoStepsStrictlyDecrease) {
  const AdamState s0(vec({1.0}));
  const AdamState s1 = pdro::adam_update(s0, vec({2.0}), hyper(0.1));
  const AdamState s2 = pdro::adam_update(s1, vec({2.0}), hyper(0.1));
  EXPECT_LT(s1.params[0], s0.params[0]);
  EXPECT_LT(s2.params[0], s1.params[0]);
  EXPECT_EQ(s2.step_count, 2);
  // Second step by hand: m = 0.38, v = 0.007996, corrections 0.19 and 0.001999.
  const double m = 0.9 * 0.2 + 0.1 * 2.0;
  const double v = 0.999 * 0.004 + 0.001 * 4.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(s2.params[0], s1.params[0] - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
}

TEST(AdamUpdate, Deterministic) {
  const AdamState s(vec({0.3, -1.2, 4.0}));
  const VectorXd g = vec({0.5, -0.25, 3.0});
  const AdamState a = pdro::adam_update(s, g, hyper(0.01));
  const AdamState b = pdro::adam_update(s, g, hyper(0.01));
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.m, b.m);
  EXPECT_EQ(a.v, b.v);
  EXPECT_TRUE((a.v.array() >= 0.0).all());
}

TEST(AdamUpdate, LengthMismatchThrows) {
  EXPECT_THROW(pdro::adam_update(AdamState(vec({1.0, 2.0})), vec({1.0}), hyper(0.1)), pdro::DimensionError);
}

TEST(AdamUpdate, NonFiniteGradientThrows) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(pdro::adam_update(AdamState(vec({1.0})), vec({nan}), hyper(0.1)), pdro::NumericError);
  EXPECT_THROW(pdro::adam_update(AdamState(vec({1.0})), vec({inf}), hyper(0.1)), pdro::NumericError);
}

TEST(AdamHyper, RejectsInvalidSettings) {
  AdamHyper h;
  h.beta1 = 1.0;
  EXPECT_THROW(h.validate(), pdro::ParameterError);
  h = AdamHyper{};
  h.learning_rate = 0.0;
  EXPECT_THROW(h.validate(), pdro::ParameterError);
  h = AdamHyper{};
  h.epsilon = -1.0;
  EXPECT_THROW(h.validate(), pdro::ParameterError);
  EXPECT_NO_THROW(AdamHyper{}.validate());
}

TEST(AdamUpdate, ConvergesOnConvexQuadratic) {
  pdro::CounterRng rng(42, pdro::Stream::kInit);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + trial % 4;
    VectorXd c(d), x0(d);
    for (Eigen::Index i = 0; i < d; ++i) c[i] = 4.0 * rng.normal();
    VectorXd dir(d);
    for (Eigen::Index i = 0; i < d; ++i) dir[i] = rng.normal();
    x0 = c + dir.normalized() * (10.0 * rng.uniform());
    AdamState s(x0);
    for (int t = 0; t < 5000; ++t) pdro::adam_step(s, 2.0 * (s.params - c), hyper(0.01));
    EXPECT_LT((s.params - c).norm(), 1e-2) << "trial " << trial;
  }
}

TEST(FiniteDiff, Square) {
  const VectorXd g = pdro::finite_diff_grad([](const VectorXd& x) { return x[0] * x[0]; }, vec({3.0}), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDiff, ConstantGivesZero) {
  const VectorXd g = pdro::finite_diff_grad([](const VectorXd&) { return 7.5; }, vec({1.0, -2.0, 3.0}), 1e-5);
  EXPECT_EQ(g, VectorXd::Zero(3));
}

TEST(FiniteDiff, Product) {
  const VectorXd g = pdro::finite_diff_grad([](const VectorXd& x) { return x[0] * x[1]; }, vec({2.0, 5.0}), 1e-5);
  EXPECT_NEAR(g[0], 5.0, 1e-8);
  EXPECT_NEAR(g[1], 2.0, 1e-8);
}

TEST(FiniteDiff, CubicPolynomialsMatchAnalytic) {
  pdro::CounterRng rng(7, pdro::Stream::kInit);
  for (int trial = 0; trial < 50; ++trial) {
    const double a = rng.normal(), b = rng.normal(), c = rng.normal(), d = rng.normal();
    auto f = [&](const VectorXd& x) {
      return a * x[0] * x[0] * x[0] + b * x[0] * x[1] * x[1] + c * x[1] + d * x[0] * x[1];
    };
    const VectorXd x = vec({rng.normal(), rng.normal()});
    VectorXd exact(2);
    exact[0] = 3 * a * x[0] * x[0] + b * x[1] * x[1] + d * x[1];
    exact[1] = 2 * b * x[0] * x[1] + c + d * x[0];
    const VectorXd g = pdro::finite_diff_grad(f, x, 1e-5);
    for (int i = 0; i < 2; ++i) {
      EXPECT_LE(std::abs(g[i] - exact[i]), 1e-6 * std::max(1.0, std::abs(exact[i]))) << "trial " << trial;
    }
  }
}

TEST(FiniteDiff, RejectsBadStepAndNonFiniteValues) {
  auto f = [](const VectorXd& x) { return x[0]; };
  EXPECT_THROW(pdro::finite_diff_grad(f, vec({1.0}), 0.0), pdro::ParameterError);
  auto g = [](const VectorXd& x) { return std::log(x[0]); };
  EXPECT_THROW(pdro::finite_diff_grad(g, vec({0.0}), 1e-3), pdro::NumericError);
}
