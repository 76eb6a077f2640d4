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

#include "modfed/validators.hpp"

namespace modfed {
namespace {

ProtocolParams Params(double alpha, double lambda, double omega, int m = 1) {
  ProtocolParams p;
  p.alpha = alpha;
  p.lambda = lambda;
  p.omega = omega;
  p.m = m;
  return p;
}

void ExpectAllPass(const std::vector<ValidationRecord>& recs) {
  for (const auto& r : recs) {
    EXPECT_TRUE(r.passed) << r.name << ": closed " << r.closed_form << " est "
                          << r.estimate << " se " << r.std_error;
  }
}

TEST(RunningStats, MatchesTwoPass) {
  RngStream rng(1);
  std::vector<double> xs;
  RunningStats s;
  for (int i = 0; i < 1000; ++i) {
    xs.push_back(5.0 + rng.normal());
    s.Add(xs.back());
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= double(xs.size() - 1);
  EXPECT_NEAR(s.mean(0), mean, 1e-12);
  EXPECT_NEAR(s.variance(0), var, 1e-10);
  EXPECT_NEAR(s.std_error(0), std::sqrt(var / 1000.0), 1e-12);
}

TEST(SeRecord, DeterministicQuantityNeedsExactMatch) {
  EXPECT_TRUE(SeRecord("a", 1.0, 1.0, 0.0, 4.0).passed);
  EXPECT_FALSE(SeRecord("a", 1.0, 1.1, 0.0, 4.0).passed);
  EXPECT_TRUE(SeRecord("a", 1.0, 1.3, 0.1, 4.0).passed);
  EXPECT_FALSE(SeRecord("a", 1.0, 1.5, 0.1, 4.0).passed);
}

TEST(Validators, GradientUnbiasedCovarianceAndVariance) {
  const ProtocolInstance inst = RandomInstance(60, 3, Params(0.4, 0.6, 1.5), 0.5, 2);
  const GradientMonteCarlo mc = RunGradientMonteCarlo(inst, 20000, 9);
  ExpectAllPass(UnbiasednessRecords(mc, inst));
  ExpectAllPass(CovarianceRecords(mc, inst));
  ExpectAllPass({VarianceRecord(mc, inst)});
}

TEST(Validators, VarianceFormulaHoldsForMultiVector) {
  const ProtocolInstance inst = RandomInstance(40, 5, Params(0.3, 0.8, 1.0, 3), 0.4, 3);
  ExpectAllPass({ValidateGradientVariance(inst, 20000, 4)});
}

TEST(Validators, DetectsWrongTarget) {
  // A 50% error in the reference covariance must be caught.
  ProtocolInstance inst = RandomInstance(60, 3, Params(0.4, 0.6, 1.5), 0.8, 2);
  GradientMonteCarlo mc = RunGradientMonteCarlo(inst, 5000, 9);
  EXPECT_TRUE(AllPassed(CovarianceRecords(mc, inst)));
  inst.data.X *= std::sqrt(1.5);
  EXPECT_FALSE(AllPassed(CovarianceRecords(mc, inst)));
}

TEST(Validators, SecondMoment) {
  RngStream rng(4);
  const OrthonormalSet V = MakeOrthonormalSet(3, 2, nullptr, rng);
  Vector x(3);
  x << 0.3, -0.5, 0.2;
  ExpectAllPass(ValidateSecondMoment(x, V, Params(0.3, 0.9, 2.0, 2), 0.6, 40000, 5));
}

TEST(Validators, CenteringIdentityIsExact) {
  const ProtocolInstance inst = RandomInstance(50, 4, Params(0.5, 0.7, 1.2), 0.9, 6);
  const ValidationRecord r = ValidateCentering(inst, 200, 1);
  EXPECT_TRUE(r.passed) << r.estimate;
  EXPECT_LT(r.estimate, 1e-10);
  ProtocolInstance multi = RandomInstance(50, 4, Params(0.5, 0.7, 1.2, 2), 0.9, 6);
  EXPECT_THROW(ValidateCentering(multi, 1, 1), ConfigError);
}

TEST(Validators, BlockNorms) {
  const ProtocolInstance inst = RandomInstance(30, 3, Params(0.5, 0.7, 1.2), 0.6, 7);
  ExpectAllPass(ValidateBlockNorms(inst, 20000, 2));
}

TEST(Validators, ScalarMoments) {
  Vector beta(4);
  beta << 0.5, -1.0, 0.3, 0.8;
  ExpectAllPass(ValidateScalarMoments(0.7, beta, 50000, 3));
}

TEST(Validators, ExpectedExpansion) {
  Vector x(3), y(3), v(3);
  x << 0.1, 0.4, -0.2;
  y << -0.3, 0.2, 0.5;
  v << 0.6, 0.0, 0.8;
  ExpectAllPass({ValidateExpectedExpansion(x, y, v, Params(0.4, 1.1, 2.5), 40000, 4)});
}

TEST(Validators, PhaseAveragedC1) {
  ExpectAllPass({ValidatePhaseAveragedC1(0.7, Params(0.4, 1.1, 2.5), 40000, 5)});
}

TEST(Validators, TinySampleStillWellFormed) {
  const ProtocolInstance inst = RandomInstance(20, 3, Params(0.5, 0.1, 1.0), 0.5, 1);
  const auto recs = ValidateUnbiasedness(inst, 10, 1);
  ASSERT_EQ(recs.size(), 3u);
  for (const auto& r : recs) {
    EXPECT_TRUE(std::isfinite(r.estimate));
    EXPECT_GT(r.std_error, 0.0);
  }
}

}  // namespace
}  // namespace modfed
