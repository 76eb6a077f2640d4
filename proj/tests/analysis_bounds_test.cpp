/*
 * Copyright 2026 The modfed Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <gtest/gtest.h>

#include <Eigen/LU>

#include "modfed/analysis_bounds.hpp"
#include "modfed/modulation.hpp"

namespace modfed {
namespace {

ReconstructionContext RandomContext(Eigen::Index d, RngStream& rng) {
  ReconstructionContext ctx;
  ctx.params.alpha = 0.05 + 0.9 * rng.uniform01();
  ctx.params.lambda = 0.05 + 2.0 * rng.uniform01();
  ctx.params.omega = 0.05 + 2.0 * rng.uniform01();
  ctx.sigma_dp = 0.2 + 2.0 * rng.uniform01();
  ctx.sigma_y = 0.2 + 2.0 * rng.uniform01();
  ctx.beta_star = Vector(d);
  ctx.v = Vector(d);
  for (Eigen::Index j = 0; j < d; ++j) ctx.beta_star(j) = rng.normal();
  for (Eigen::Index j = 0; j < d; ++j) ctx.v(j) = rng.normal();
  ctx.v.normalize();
  return ctx;
}

TEST(GradientVariance, HandComputed) {
  VarianceInputs in;
  in.S_r_sq = 2.0;
  in.beta_sigma_rx = 0.5;
  in.tr_sigma_x = 3.0;
  in.beta_norm_sq = 4.0;
  in.K = 10;
  in.d = 2;
  in.alpha = 0.5;
  in.lambda = 1.0;
  in.sigma_dp = 1.0;
  // first = 2 (0.5 + 2) + 2 * 0.5 + 4 * 3 = 18; second = 4 (0.5 + 3) = 14.
  EXPECT_NEAR(GradientVariance(in), 18.0 / 2.5 + 14.0 / 0.625, 1e-12);
  in.sigma_dp = 0.0;
  EXPECT_NEAR(GradientVariance(in), 2.0 * 0.5 / 2.5, 1e-15);
  in.S_r_sq = -1.0;
  EXPECT_THROW(GradientVariance(in), ConfigError);
}

TEST(GradientVariance, FromDataUsesSampleMoments) {
  Matrix X(2, 2);
  X << 1, 0, 0, 2;
  Vector Y(2), b(2);
  Y << 1, 1;
  b << 1, 1;
  ProtocolParams p;
  const VarianceInputs in = VarianceInputs::FromData(X, Y, b, p, 0.5);
  EXPECT_DOUBLE_EQ(in.S_r_sq, 0.5);          // r = (0, 1)
  EXPECT_DOUBLE_EQ(in.beta_sigma_rx, 1.0);   // X^T r = (0, 2)
  EXPECT_DOUBLE_EQ(in.tr_sigma_x, 2.5);
  EXPECT_DOUBLE_EQ(in.beta_norm_sq, 2.0);
}

TEST(UniformBound, DominatesVarianceUnderConstraints) {
  RngStream rng(4);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index k = 5 + t % 20, d = 1 + t % 5;
    Matrix X(k, d);
    Vector Y(k), beta(d);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < k; ++i) Y(i) = 3.0 * rng.normal();
    for (Eigen::Index j = 0; j < d; ++j) beta(j) = rng.normal();
    ProtocolParams p;
    p.alpha = 0.05 + 0.9 * rng.uniform01();
    p.lambda = 2.0 * rng.uniform01() + 1e-3;
    const double sigma = 2.0 * rng.uniform01();
    const BoundConstants c{beta.norm(), X.rowwise().norm().maxCoeff(),
                           Y.cwiseAbs().maxCoeff()};
    const double v =
        GradientVariance(VarianceInputs::FromData(X, Y, beta, p, sigma));
    ASSERT_LE(v, UniformVarianceBound(c, p, sigma, k, d) * (1 + 1e-12));
  }
  EXPECT_THROW(UniformVarianceBound({0, 1, 1}, {}, 1.0, 1, 1), ConfigError);
}

TEST(ConvergenceBound, Formula) {
  EXPECT_DOUBLE_EQ(ConvergenceBound(2.0, 3.0, 4, 5.0, 10), 2 * 3.0 / 8 + 5.0 / 40);
  EXPECT_THROW(ConvergenceBound(0.0, 1, 1, 1, 1), ConfigError);
  EXPECT_THROW(ConvergenceBound(1.0, 1, 0, 1, 1), ConfigError);
}

TEST(Jacobian, MatchesCentralFiniteDifferences) {
  RngStream rng(5);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index d = 2 + t % 5;
    const ReconstructionContext ctx = RandomContext(d, rng);
    Vector x(d);
    for (Eigen::Index j = 0; j < d; ++j) x(j) = rng.normal();
    const double phi = rng.phase();
    const Matrix J = ModulationJacobian(x, phi, ctx);
    Matrix fd(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
      Vector xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      fd.col(j) = (ModulateSingle(xp, ctx.v, phi, ctx.params) -
                   ModulateSingle(xm, ctx.v, phi, ctx.params)) /
                  (2.0 * h);
    }
    ASSERT_LE((J - fd).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Fisher, EqualsJacobianGramPlusResponseTerm) {
  RngStream rng(6);
  for (int t = 0; t < 30; ++t) {
    const ReconstructionContext ctx = RandomContext(4, rng);
    Vector x(4);
    for (int j = 0; j < 4; ++j) x(j) = rng.normal();
    const double phi = rng.phase();
    const Matrix J = ModulationJacobian(x, phi, ctx);
    const Matrix ref = J.transpose() * J / (ctx.sigma_dp * ctx.sigma_dp) +
                       ctx.beta_star * ctx.beta_star.transpose() /
                           (ctx.sigma_y * ctx.sigma_y);
    ASSERT_LE((FisherInformation(x, phi, ctx) - ref).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Crb, TraceInequalityAndConditionalForm) {
  RngStream rng(7);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index d = 2 + t % 6;
    const ReconstructionContext ctx = RandomContext(d, rng);
    Vector x(d);
    for (Eigen::Index j = 0; j < d; ++j) x(j) = rng.normal();
    const double phi = rng.phase();
    const Matrix I = FisherInformation(x, phi, ctx);
    const double tr_inv = I.inverse().trace();
    ASSERT_GE(tr_inv, double(d * d) / I.trace() * (1 - 1e-10));
    // The conditional bound is d / tr(I) per dimension.
    ASSERT_NEAR(CrbConditional(x, phi, ctx), double(d) / I.trace(),
                1e-10 * double(d) / I.trace());
  }
}

TEST(Crb, PhaseAveragedMonotoneInSigma) {
  RngStream rng(8);
  ReconstructionContext ctx = RandomContext(5, rng);
  double prev = 0.0;
  for (int i = 1; i <= 50; ++i) {
    ctx.sigma_dp = 0.1 * i;
    const double b = CrbPhaseAveraged(ctx);
    EXPECT_GT(b, prev);
    prev = b;
  }
}

TEST(Crb, NoLeakageWhenBetaStarIsZero) {
  RngStream rng(9);
  ReconstructionContext ctx = RandomContext(3, rng);
  ctx.beta_star.setZero();
  const double om = 1.0 - ctx.params.alpha;
  const double lw = ctx.params.lambda * ctx.params.omega;
  const double s2 = ctx.sigma_dp * ctx.sigma_dp;
  EXPECT_NEAR(CrbPhaseAveraged(ctx), 1.0 / (om * om / s2 + lw * lw / (6.0 * s2)),
              1e-12);
}

TEST(Crb, DegenerateInformationThrows) {
  ReconstructionContext ctx;
  ctx.params.alpha = 0.5;
  ctx.params.lambda = 1.0;
  ctx.params.omega = 1.0;
  ctx.sigma_dp = 1.0;
  ctx.beta_star = Vector::Zero(1);
  ctx.v = Vector::Ones(1);
  // sin(theta) = (1 - alpha) / (lambda omega) zeroes the d = 1 information.
  const double theta = std::asin(0.5);
  EXPECT_THROW(CrbConditional(Vector::Zero(1), theta, ctx), NumericalError);
  ctx.v = 2.0 * Vector::Ones(1);
  EXPECT_THROW(CrbPhaseAveraged(ctx), ConfigError);
}

TEST(C1, ClosedForm) {
  ProtocolParams p;
  p.alpha = 0.5;
  p.lambda = 2.0;
  p.omega = 0.5;
  EXPECT_DOUBLE_EQ(C1Coefficient(0.0, p), 0.0);
  EXPECT_NEAR(C1Coefficient(std::numbers::pi / 2, p), -1.0 + 1.0, 1e-15);
  EXPECT_NEAR(C1Coefficient(-std::numbers::pi / 2, p), 1.0 + 1.0, 1e-15);
}

}  // namespace
}  // namespace modfed
