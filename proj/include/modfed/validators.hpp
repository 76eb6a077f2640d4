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
#pragma once

// Monte-Carlo validators. Each one simulates the protocol (or the relevant
// random variables) and compares sample means against a closed form, passing
// when the gap is within k standard errors.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "modfed/analysis_bounds.hpp"
#include "modfed/core_model.hpp"
#include "modfed/modulation.hpp"
#include "modfed/server_protocol.hpp"

namespace modfed {

/// Welford accumulator over fixed-length sample vectors.
class RunningStats {
 public:
  explicit RunningStats(Eigen::Index n = 1)
      : mean_(Eigen::ArrayXd::Zero(n)), m2_(Eigen::ArrayXd::Zero(n)) {}

  void Add(const Eigen::Ref<const Eigen::ArrayXd>& x) {
    ++count_;
    const Eigen::ArrayXd delta = x - mean_;
    mean_ += delta / double(count_);
    m2_ += delta * (x - mean_);
  }

  void Add(double x) {
    Eigen::ArrayXd a(1);
    a(0) = x;
    Add(a);
  }

  std::int64_t count() const { return count_; }
  const Eigen::ArrayXd& mean() const { return mean_; }
  double mean(Eigen::Index i) const { return mean_(i); }

  double variance(Eigen::Index i) const {
    return count_ > 1 ? m2_(i) / double(count_ - 1) : 0.0;
  }

  double std_error(Eigen::Index i) const {
    return count_ > 0 ? std::sqrt(variance(i) / double(count_)) : 0.0;
  }

 private:
  std::int64_t count_ = 0;
  Eigen::ArrayXd mean_;
  Eigen::ArrayXd m2_;
};

struct ValidationRecord {
  std::string name;
  double closed_form = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  // In standard errors, or an absolute tolerance when std_error is unused.
  double tolerance = 4.0;
  bool absolute = false;
  bool passed = false;
};

inline ValidationRecord SeRecord(std::string name, double closed_form,
                                 double estimate, double se, double k_se) {
  ValidationRecord r{std::move(name), closed_form, estimate, se, k_se, false,
                     false};
  const double gap = std::abs(estimate - closed_form);
  if (se > 0.0) {
    r.passed = gap <= k_se * se;
  } else {
    // Zero sample variance: the quantity is deterministic.
    r.passed = gap <= 1e-12 * std::max(1.0, std::abs(closed_form));
  }
  return r;
}

inline ValidationRecord SeRecord(std::string name, double closed_form,
                                 const RunningStats& s, Eigen::Index i,
                                 double k_se) {
  return SeRecord(std::move(name), closed_form, s.mean(i), s.std_error(i),
                  k_se);
}

inline bool AllPassed(const std::vector<ValidationRecord>& records) {
  for (const auto& r : records) {
    if (!r.passed) return false;
  }
  return true;
}

/// Fixed data, model and modulation set for a simulation study.
struct ProtocolInstance {
  Dataset data;
  Vector beta;
  ProtocolParams params;
  double sigma_dp = 0.5;
  OrthonormalSet V;

  Vector TrueGradient() const {
    const double k = double(data.num_clients());
    return (data.X.transpose() * (data.X * beta - data.Y)) / k;
  }

  Matrix TrueCovariance() const {
    return data.X.transpose() * data.X / double(data.num_clients());
  }
};

/// Random instance: Gaussian rows projected into the unit ball, a linear
/// response with unit noise, a random beta of norm `beta_norm`, and V drawn
/// orthogonal to beta.
inline ProtocolInstance RandomInstance(Eigen::Index K, Eigen::Index d,
                                       const ProtocolParams& params,
                                       double sigma_dp, std::uint64_t seed,
                                       double beta_norm = 1.0) {
  RngStream rng(seed, StreamKey{0, 0, Purpose::kAnalysis});
  Matrix X(K, d);
  for (Eigen::Index i = 0; i < K; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal() / std::sqrt(double(d));
    const double n = X.row(i).norm();
    if (n > 1.0) X.row(i) /= n;
  }
  Vector beta_star(d), beta(d);
  for (Eigen::Index j = 0; j < d; ++j) beta_star(j) = rng.normal();
  for (Eigen::Index j = 0; j < d; ++j) beta(j) = rng.normal();
  beta *= beta_norm / beta.norm();
  Vector Y = X * beta_star;
  for (Eigen::Index i = 0; i < K; ++i) Y(i) += 0.5 * rng.normal();
  ProtocolInstance inst{MakeDataset(std::move(X), std::move(Y)), beta, params,
                        sigma_dp, {}};
  inst.V = MakeOrthonormalSet(d, params.m, &inst.beta, rng);
  return inst;
}

/// Sample moments of G, Sigma_hat_x and ||G - grad L||^2 over N independent
/// rounds at a fixed beta.
struct GradientMonteCarlo {
  RunningStats gradient;
  RunningStats covariance;  // column-major d x d
  RunningStats error_sq;
};

inline GradientMonteCarlo RunGradientMonteCarlo(const ProtocolInstance& inst,
                                                int N, std::uint64_t seed) {
  const Eigen::Index d = inst.data.dim();
  GradientMonteCarlo mc{RunningStats(d), RunningStats(d * d), RunningStats(1)};
  const Vector grad = inst.TrueGradient();
  for (int n = 0; n < N; ++n) {
    const PayloadBatch batch = SimulateClients(
        inst.data, inst.V, inst.params, inst.sigma_dp, seed, std::uint64_t(n));
    const DebiasedMoments m =
        ComputeMoments(batch, inst.V, inst.params, inst.sigma_dp, inst.beta);
    mc.gradient.Add(m.G.array());
    mc.covariance.Add(m.sigma_x_hat.reshaped().array());
    mc.error_sq.Add((m.G - grad).squaredNorm());
  }
  return mc;
}

inline std::vector<ValidationRecord> UnbiasednessRecords(
    const GradientMonteCarlo& mc, const ProtocolInstance& inst,
    double k_se = 4.0) {
  std::vector<ValidationRecord> out;
  const Vector grad = inst.TrueGradient();
  for (Eigen::Index j = 0; j < grad.size(); ++j) {
    out.push_back(SeRecord("gradient_mean[" + std::to_string(j) + "]",
                           grad(j), mc.gradient, j, k_se));
  }
  return out;
}

inline std::vector<ValidationRecord> CovarianceRecords(
    const GradientMonteCarlo& mc, const ProtocolInstance& inst,
    double k_se = 4.0) {
  std::vector<ValidationRecord> out;
  const Matrix cov = inst.TrueCovariance();
  const Eigen::Index d = cov.rows();
  for (Eigen::Index c = 0; c < d; ++c) {
    for (Eigen::Index r = 0; r <= c; ++r) {
      out.push_back(SeRecord("covariance_mean[" + std::to_string(r) + "," +
                                 std::to_string(c) + "]",
                             cov(r, c), mc.covariance, c * d + r, k_se));
    }
  }
  return out;
}

inline ValidationRecord VarianceRecord(const GradientMonteCarlo& mc,
                                       const ProtocolInstance& inst,
                                       double k_se = 5.0) {
  const double closed = GradientVariance(VarianceInputs::FromData(
      inst.data.X, inst.data.Y, inst.beta, inst.params, inst.sigma_dp));
  return SeRecord("gradient_variance", closed, mc.error_sq, 0, k_se);
}

inline std::vector<ValidationRecord> ValidateUnbiasedness(
    const ProtocolInstance& inst, int N, std::uint64_t seed,
    double k_se = 4.0) {
  return UnbiasednessRecords(RunGradientMonteCarlo(inst, N, seed), inst, k_se);
}

inline std::vector<ValidationRecord> ValidateCovarianceDebiasing(
    const ProtocolInstance& inst, int N, std::uint64_t seed,
    double k_se = 4.0) {
  return CovarianceRecords(RunGradientMonteCarlo(inst, N, seed), inst, k_se);
}

inline ValidationRecord ValidateGradientVariance(const ProtocolInstance& inst,
                                                 int N, std::uint64_t seed,
                                                 double k_se = 5.0) {
  return VarianceRecord(RunGradientMonteCarlo(inst, N, seed), inst, k_se);
}

/// Conditional mean and second moment of one client's release:
/// E[g~ | x] = (1 - alpha) x and
/// E[g~ g~^T | x] = (1 - alpha)^2 x x^T + (lambda^2 / 2m) P_V + sigma^2 I.
inline std::vector<ValidationRecord> ValidateSecondMoment(
    const Vector& x, const OrthonormalSet& V, const ProtocolParams& p,
    double sigma_dp, int N, std::uint64_t seed, double k_se = 4.0) {
  const Eigen::Index d = x.size();
  RunningStats first(d), second(d * d);
  for (int n = 0; n < N; ++n) {
    RngStream rng(seed, StreamKey{std::uint64_t(n), 0, Purpose::kValidation});
    const Vector g = Privatize(x, V, p, sigma_dp, rng);
    first.Add(g.array());
    second.Add((g * g.transpose()).reshaped().array());
  }
  const double om = 1.0 - p.alpha;
  Matrix expected = om * om * x * x.transpose() +
                    p.lambda * p.lambda / (2.0 * double(V.size())) *
                        V.projector();
  expected.diagonal().array() += sigma_dp * sigma_dp;
  std::vector<ValidationRecord> out;
  for (Eigen::Index j = 0; j < d; ++j) {
    out.push_back(SeRecord("release_mean[" + std::to_string(j) + "]",
                           om * x(j), first, j, k_se));
  }
  for (Eigen::Index c = 0; c < d; ++c) {
    for (Eigen::Index r = 0; r <= c; ++r) {
      out.push_back(SeRecord("second_moment[" + std::to_string(r) + "," +
                                 std::to_string(c) + "]",
                             expected(r, c), second, c * d + r, k_se));
    }
  }
  return out;
}

/// The three mean-zero blocks of G - grad L for one simulated round.
struct CenteringBlocks {
  Vector T1, T2, T3;
  Vector lhs;  // G - grad L(beta)
};

/// Builds T1 = lambda (C^T r) v + Xi^T r, T2 = X^T q and
/// T3 = lambda (C^T q) v + Xi^T q - K sigma^2 beta from the round's own phases
/// and noise, alongside the directly computed G - grad L. Requires m = 1.
inline CenteringBlocks ComputeCenteringBlocks(const ProtocolInstance& inst,
                                              std::uint64_t seed,
                                              std::uint64_t round) {
  if (inst.V.size() != 1) throw ConfigError("centering blocks need m = 1");
  const auto& X = inst.data.X;
  const auto& p = inst.params;
  const double k = double(X.rows());
  BatchTrace trace;
  const PayloadBatch batch = SimulateClients(inst.data, inst.V, p,
                                             inst.sigma_dp, seed, round, &trace);
  const Vector v = inst.V.V().col(0);
  const Vector theta =
      (p.omega * (X * v)).array() + trace.phases.col(0).array();
  const Vector C = theta.array().cos().matrix();
  const Vector r = X * inst.beta - inst.data.Y;
  const Vector q = trace.noise * inst.beta;
  CenteringBlocks b;
  b.T1 = p.lambda * C.dot(r) * v + trace.noise.transpose() * r;
  b.T2 = X.transpose() * q;
  b.T3 = p.lambda * C.dot(q) * v + trace.noise.transpose() * q -
         k * inst.sigma_dp * inst.sigma_dp * inst.beta;
  const DebiasedMoments m =
      ComputeMoments(batch, inst.V, p, inst.sigma_dp, inst.beta);
  b.lhs = m.G - inst.TrueGradient();
  return b;
}

inline Vector CenteringRhs(const CenteringBlocks& b, double alpha,
                           Eigen::Index K) {
  const double om = 1.0 - alpha;
  const double k = double(K);
  return (b.T1 + b.T2) / (k * om) + b.T3 / (k * om * om);
}

/// Per-draw check of G - grad L = (T1 + T2)/(K(1-alpha)) + T3/(K(1-alpha)^2).
inline ValidationRecord ValidateCentering(const ProtocolInstance& inst, int N,
                                          std::uint64_t seed,
                                          double tol = 1e-10) {
  double worst = 0.0;
  for (int n = 0; n < N; ++n) {
    const CenteringBlocks b = ComputeCenteringBlocks(inst, seed, std::uint64_t(n));
    const Vector rhs = CenteringRhs(b, inst.params.alpha, inst.data.num_clients());
    worst = std::max(worst, (b.lhs - rhs).cwiseAbs().maxCoeff());
  }
  ValidationRecord r{"centering_identity", 0.0, worst, 0.0, tol, true,
                     worst <= tol};
  return r;
}

/// Second moments of the centering blocks against their closed forms, plus
/// the cross-block orthogonality E[T1^T T3] = E[T2^T T3] = 0.
inline std::vector<ValidationRecord> ValidateBlockNorms(
    const ProtocolInstance& inst, int N, std::uint64_t seed,
    double k_se = 5.0) {
  const auto& X = inst.data.X;
  const auto K = X.rows();
  const double d = double(X.cols());
  const double s2 = inst.sigma_dp * inst.sigma_dp;
  const double l2 = inst.params.lambda * inst.params.lambda;
  const Vector r = X * inst.beta - inst.data.Y;
  const double b2 = inst.beta.squaredNorm();
  const double block1 = r.squaredNorm() * (0.5 * l2 + d * s2) +
                        2.0 * s2 * inst.beta.dot(X.transpose() * r) +
                        s2 * b2 * X.squaredNorm();
  const double block3 = double(K) * b2 * (0.5 * l2 * s2 + (d + 1.0) * s2 * s2);

  RunningStats s(5);
  for (int n = 0; n < N; ++n) {
    const CenteringBlocks b = ComputeCenteringBlocks(inst, seed, std::uint64_t(n));
    const Vector t12 = b.T1 + b.T2;
    Eigen::ArrayXd a(5);
    a << t12.squaredNorm(), b.T3.squaredNorm(), t12.dot(b.T3), b.T1.dot(b.T3),
        b.T2.dot(b.T3);
    s.Add(a);
  }
  return {SeRecord("block_T1_plus_T2_sq", block1, s, 0, k_se),
          SeRecord("block_T3_sq", block3, s, 1, k_se),
          SeRecord("cross_T12_T3", 0.0, s, 2, k_se),
          SeRecord("cross_T1_T3", 0.0, s, 3, k_se),
          SeRecord("cross_T2_T3", 0.0, s, 4, k_se)};
}

/// Scalar moment identities of the phase and noise variables:
/// E[C_i] = 0, E[C_i C_j] = delta_ij / 2, E[q_i] = 0,
/// E[q_i q_j] = sigma^2 ||beta||^2 delta_ij, E[q_i (xi_i^T a)] = sigma^2 beta^T a,
/// E[(xi^T beta) ||xi||^2] = 0, E[(xi^T beta)^2 ||xi||^2] = sigma^4 (d+2) ||beta||^2.
inline std::vector<ValidationRecord> ValidateScalarMoments(
    double sigma_dp, const Vector& beta, int N, std::uint64_t seed,
    double k_se = 4.0) {
  const Eigen::Index d = beta.size();
  RngStream setup(seed, StreamKey{0, 0, Purpose::kAnalysis});
  Vector a(d);
  for (Eigen::Index j = 0; j < d; ++j) a(j) = setup.normal();
  const double off1 = 2.0 * std::numbers::pi * setup.uniform01();
  const double off2 = 2.0 * std::numbers::pi * setup.uniform01();

  RunningStats s(9);
  for (int n = 0; n < N; ++n) {
    RngStream rng(seed, StreamKey{std::uint64_t(n), 0, Purpose::kValidation});
    const double c1 = std::cos(off1 + rng.phase());
    const double c2 = std::cos(off2 + rng.phase());
    Vector xi1(d), xi2(d);
    for (Eigen::Index j = 0; j < d; ++j) xi1(j) = sigma_dp * rng.normal();
    for (Eigen::Index j = 0; j < d; ++j) xi2(j) = sigma_dp * rng.normal();
    const double q1 = xi1.dot(beta);
    const double q2 = xi2.dot(beta);
    Eigen::ArrayXd v(9);
    v << c1, c1 * c1, c1 * c2, q1, q1 * q1, q1 * q2, q1 * xi1.dot(a),
        q1 * xi1.squaredNorm(), q1 * q1 * xi1.squaredNorm();
    s.Add(v);
  }
  const double s2 = sigma_dp * sigma_dp;
  const double b2 = beta.squaredNorm();
  return {SeRecord("E[C_i]", 0.0, s, 0, k_se),
          SeRecord("E[C_i^2]", 0.5, s, 1, k_se),
          SeRecord("E[C_i C_j]", 0.0, s, 2, k_se),
          SeRecord("E[q_i]", 0.0, s, 3, k_se),
          SeRecord("E[q_i^2]", s2 * b2, s, 4, k_se),
          SeRecord("E[q_i q_j]", 0.0, s, 5, k_se),
          SeRecord("E[q_i xi_i^T a]", s2 * beta.dot(a), s, 6, k_se),
          SeRecord("E[(xi^T beta) |xi|^2]", 0.0, s, 7, k_se),
          SeRecord("E[(xi^T beta)^2 |xi|^2]", s2 * s2 * double(d + 2) * b2, s,
                   8, k_se)};
}

/// E_phi ||g(x) - g(x')||^2 with a shared phase, against the closed form.
inline ValidationRecord ValidateExpectedExpansion(const Vector& x,
                                                  const Vector& x_prime,
                                                  const Vector& v,
                                                  const ProtocolParams& p,
                                                  int N, std::uint64_t seed,
                                                  double k_se = 4.0) {
  RunningStats s(1);
  for (int n = 0; n < N; ++n) {
    RngStream rng(seed, StreamKey{std::uint64_t(n), 0, Purpose::kValidation});
    const double phi = rng.phase();
    s.Add((ModulateSingle(x, v, phi, p) - ModulateSingle(x_prime, v, phi, p))
              .squaredNorm());
  }
  return SeRecord("expected_expansion", ExpectedPairDistanceSq(x, x_prime, v, p),
                  s, 0, k_se);
}

/// E_phi[c1] = lambda^2 omega^2 / 2 over a uniform phase.
inline ValidationRecord ValidatePhaseAveragedC1(double theta0,
                                                const ProtocolParams& p, int N,
                                                std::uint64_t seed,
                                                double k_se = 4.0) {
  RunningStats s(1);
  for (int n = 0; n < N; ++n) {
    RngStream rng(seed, StreamKey{std::uint64_t(n), 0, Purpose::kValidation});
    s.Add(C1Coefficient(theta0 + rng.phase(), p));
  }
  const double lw = p.lambda * p.omega;
  return SeRecord("phase_averaged_c1", 0.5 * lw * lw, s, 0, k_se);
}

}  // namespace modfed
