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

#include "modfed/server_protocol.hpp"

namespace modfed {
namespace {

// Cyclic Jacobi eigenvalue iteration; independent of Eigen's solver.
std::vector<double> JacobiEigenvalues(Matrix a) {
  const Eigen::Index n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = 0.5 * std::atan2(2 * a(p, q), a(q, q) - a(p, p));
        const double c = std::cos(theta), s = std::sin(theta);
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ev[std::size_t(i)] = a(i, i);
  return ev;
}

Dataset RandomClients(Eigen::Index k, Eigen::Index d, std::uint64_t seed) {
  RngStream rng(seed);
  Matrix X(k, d);
  Vector Y(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal() / std::sqrt(double(d));
    Y(i) = rng.normal();
  }
  return MakeDataset(X, Y);
}

TEST(Aggregate, MatchesNaiveLoops) {
  RngStream rng(3);
  PayloadBatch b{Matrix(7, 3), Vector(7)};
  for (Eigen::Index i = 0; i < 7; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) b.g_tilde(i, j) = rng.normal();
    b.y(i) = rng.normal();
  }
  Matrix s = Matrix::Zero(3, 3);
  Vector z = Vector::Zero(3);
  for (int i = 0; i < 7; ++i) {
    for (int r = 0; r < 3; ++r) {
      z(r) += b.y(i) * b.g_tilde(i, r);
      for (int c = 0; c < 3; ++c) s(r, c) += b.g_tilde(i, r) * b.g_tilde(i, c);
    }
  }
  s /= 7.0;
  ProtocolParams p;
  p.alpha = 0.2;
  z /= 7.0 * 0.8;
  EXPECT_LE((AggregateSecondMoment(b) - s).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(AggregateSecondMoment(b), AggregateSecondMoment(b).transpose());
  EXPECT_LE((DebiasCrossMoment(b, p) - z).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Aggregate, FromPayloadsRoundTrip) {
  std::vector<ClientPayload> ps{{Vector::Ones(2), 1.0}, {Vector::Zero(2), -2.0}};
  const PayloadBatch b = PayloadBatch::FromPayloads(ps);
  EXPECT_EQ(b.size(), 2);
  EXPECT_EQ(b.payload(1).y, -2.0);
  std::vector<ClientPayload> bad{{Vector::Ones(2), 1.0}, {Vector::Zero(3), 0.0}};
  EXPECT_THROW(PayloadBatch::FromPayloads(bad), DataError);
  EXPECT_THROW(PayloadBatch::FromPayloads(std::vector<ClientPayload>{}), DataError);
}

TEST(Debias, RemovesModulationAndNoiseTerms) {
  ProtocolParams p;
  p.alpha = 0.3;
  p.lambda = 0.8;
  RngStream rng(1);
  const OrthonormalSet V = MakeOrthonormalSet(4, 2, nullptr, rng);
  Matrix sx = Matrix::Random(4, 4);
  sx = sx * sx.transpose();
  const double sigma = 0.6;
  Matrix s = 0.49 * sx + (0.64 / 4.0) * V.projector();
  s.diagonal().array() += 0.36;
  EXPECT_LE((DebiasCovariance(s, V, p, sigma) - sx).cwiseAbs().maxCoeff(), 1e-12);
  const OrthonormalSet V1 = MakeOrthonormalSet(4, 1, nullptr, rng);
  Matrix s1 = 0.49 * sx + 0.32 * V1.projector();
  s1.diagonal().array() += 0.36;
  EXPECT_LE((DebiasCovarianceSingle(s1, V1.column(0), p, sigma) - sx)
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
  EXPECT_THROW(DebiasCovariance(Matrix::Zero(3, 3), V, p, sigma), ConfigError);
}

TEST(OperatorNorm, AgreesWithJacobiOracle) {
  RngStream rng(8);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index n = 2 + t % 6;
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    a = (0.5 * (a + a.transpose())).eval();
    double ref = 0.0;
    for (double e : JacobiEigenvalues(a)) ref = std::max(ref, std::abs(e));
    EXPECT_NEAR(OperatorNorm(a), ref, 1e-10 * std::max(1.0, ref));
  }
}

TEST(Step, AdaptiveAndFixedAndDegenerate) {
  Matrix a = Matrix::Identity(3, 3);
  a(0, 0) = -4.0;
  EXPECT_DOUBLE_EQ(AdaptiveStep(a, 0.8), 0.2);
  EXPECT_DOUBLE_EQ(StepSize(StepRule::Fixed(0.3), a), 0.3);
  EXPECT_DOUBLE_EQ(CurvatureStep(2.0 * Matrix::Identity(2, 2)), 0.5);
  EXPECT_THROW(AdaptiveStep(Matrix::Zero(2, 2), 1.0), NumericalError);
}

TEST(UpdateBeta, ProjectsOntoBall) {
  Vector b = Vector::Zero(2), g(2);
  g << -3.0, -4.0;
  const Vector out = UpdateBeta(b, g, 1.0, 2.0);
  EXPECT_NEAR(out.norm(), 2.0, 1e-15);
  EXPECT_NEAR(out(0) / out(1), 0.75, 1e-15);
  EXPECT_EQ(UpdateBeta(b, g, 1.0, kInf), -g);
  EXPECT_THROW(UpdateBeta(b, g, 0.0, 1.0), ConfigError);
  EXPECT_THROW(UpdateBeta(b, g, 1.0, 0.0), ConfigError);
}

TEST(RunRound, ChargesLedgerAndKeepsVOrthogonal) {
  const Dataset data = RandomClients(50, 4, 2);
  ProtocolParams p;
  p.m = 2;
  p.rounds = 5;
  const PrivacyBudget budget = CalibrateZcdp(2.0, 1e-5, 5, LipschitzConstant(p));
  const ProtocolRun run = RunProtocol(data, p, budget, 9);
  ASSERT_EQ(run.rounds.size(), 5u);
  EXPECT_EQ(run.ledger.size(), 5u);
  EXPECT_NEAR(run.ledger.epsilon(1e-5), 2.0, 1e-10);
  for (const auto& r : run.rounds) {
    if (r.beta_before.norm() > 0) {
      EXPECT_LE((r.V.transpose() * r.beta_before).cwiseAbs().maxCoeff(),
                1e-12 * r.beta_before.norm());
    }
    EXPECT_EQ(r.V.cols(), 2);
  }
  EXPECT_EQ(run.final_state.round_index, 5);
}

TEST(RunRound, RequiresCalibratedBudget) {
  const Dataset data = RandomClients(10, 3, 2);
  PrivacyLedger l;
  EXPECT_THROW(RunRound({Vector::Zero(3), 0}, data, {}, PrivacyBudget{}, 1, l),
               ConfigError);
  EXPECT_THROW(RunRound({Vector::Zero(2), 0}, data, {},
                        CalibrateZcdp(1, 1e-5, 1, 0.6), 1, l),
               ConfigError);
}

TEST(RunRound, IndependentOfThreadCount) {
  const Dataset data = RandomClients(300, 5, 4);
  ProtocolParams p;
  p.rounds = 3;
  const PrivacyBudget budget = CalibrateZcdp(3.0, 1e-5, 3, LipschitzConstant(p));
  const ProtocolRun a = RunProtocol(data, p, budget, 5, 1);
  const ProtocolRun b = RunProtocol(data, p, budget, 5, 4);
  EXPECT_EQ(a.final_state.beta, b.final_state.beta);
  const ProtocolRun c = RunProtocol(data, p, budget, 6, 1);
  EXPECT_NE(a.final_state.beta, c.final_state.beta);
}

TEST(RunRound, SingleVectorPathIsBitIdentical) {
  ProtocolParams p;
  p.lambda = 0.7;
  p.omega = 1.3;
  const double sigma = 0.4;
  PrivacyBudget budget = CalibrateZcdp(5.0, 1e-5, 1, LipschitzConstant(p));
  budget.sigma_dp = sigma;
  for (int t = 0; t < 20; ++t) {
    const Dataset data = RandomClients(30, 3 + t % 3, 100 + t);
    RngStream br(t);
    Vector beta(data.dim());
    for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) = br.normal();
    const ModelState s{beta, t};
    PrivacyLedger l;
    const RoundOutcome a = RunRound(s, data, p, budget, 77, l);
    const RoundOutcome b = RunRoundSingleVector(s, data, p, sigma, 77);
    ASSERT_EQ(a.record.moments.G, b.record.moments.G);
    ASSERT_EQ(a.state.beta, b.state.beta);
  }
}

}  // namespace
}  // namespace modfed
