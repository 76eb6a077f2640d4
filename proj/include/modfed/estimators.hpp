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

// One-shot moment estimator, the OLS reference and the DP-SGD FedAvg
// baseline, plus the R^2 metric.

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>

#include "modfed/core_model.hpp"
#include "modfed/privacy_accounting.hpp"
#include "modfed/server_protocol.hpp"

namespace modfed {

struct OneShotResult {
  Vector gamma_hat;
  Matrix sigma_x_hat;
  Vector beta_hat;
  double ridge_gamma = 0.0;
  // Set when the symmetric factorization failed and a least-squares solve
  // was used instead.
  bool used_least_squares = false;
};

/// Single-release estimator: Gamma_hat = (1/(1-alpha)) (1/K) sum y_i h_i,
/// Sigma_hat_x from the usual debiasing, then (Sigma_hat_x + gamma I) beta =
/// Gamma_hat.
inline OneShotResult OneShotEstimate(const PayloadBatch& batch,
                                     const OrthonormalSet& V,
                                     const ProtocolParams& p, double sigma_dp,
                                     double ridge_gamma) {
  if (!(ridge_gamma >= 0.0)) throw ConfigError("ridge gamma must be >= 0");
  OneShotResult r;
  r.ridge_gamma = ridge_gamma;
  r.gamma_hat = DebiasCrossMoment(batch, p);
  r.sigma_x_hat = DebiasCovariance(AggregateSecondMoment(batch), V, p, sigma_dp);
  Matrix a = r.sigma_x_hat;
  a.diagonal().array() += ridge_gamma;

  Eigen::LDLT<Matrix> ldlt(a);
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if (ldlt.info() == Eigen::Success && ldlt.rcond() > 1e-12) {
    r.beta_hat = ldlt.solve(r.gamma_hat);
    const double resid = (a * r.beta_hat - r.gamma_hat).norm();
    if (r.beta_hat.allFinite() &&
        resid <= 1e-8 * std::max(1.0, scale * r.beta_hat.norm())) {
      return r;
    }
  }
  // LDLT can break down on indefinite input; a pivoted LU still solves any
  // well-conditioned system.
  Eigen::FullPivLU<Matrix> lu(a);
  if (lu.isInvertible() && lu.rcond() > 1e-12) {
    r.beta_hat = lu.solve(r.gamma_hat);
    if (r.beta_hat.allFinite()) return r;
  }
  if (ridge_gamma == 0.0) {
    throw NumericalError(
        "debiased covariance is singular or ill-conditioned; use a ridge "
        "gamma > 0");
  }
  r.beta_hat = a.completeOrthogonalDecomposition().solve(r.gamma_hat);
  r.used_least_squares = true;
  return r;
}

/// Ordinary least squares via column-pivoted QR.
inline Vector Ols(const Dataset& data) {
  data.Validate();
  Eigen::ColPivHouseholderQR<Matrix> qr(data.X);
  if (qr.rank() < data.dim()) {
    throw NumericalError("design matrix is not of full column rank");
  }
  return qr.solve(data.Y);
}

/// One FedAvg round of DP-SGD: each client clips its squared-loss gradient
/// (x^T beta - y) x to norm C, adds N(0, sigma^2 I), the server averages and
/// steps beta <- beta - lr * mean.
inline ModelState DpSgdFedAvgRound(const ModelState& state,
                                   const Dataset& clients, double clip_c,
                                   double lr, double sigma_dp,
                                   std::uint64_t seed) {
  if (!(clip_c > 0.0)) throw ConfigError("clip norm C must be > 0");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(sigma_dp >= 0.0)) throw ConfigError("sigma_dp must be >= 0");
  const Eigen::Index k = clients.num_clients();
  const Eigen::Index d = clients.dim();
  Vector sum = Vector::Zero(d);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto x = clients.X.row(i).transpose();
    Vector g = (x.dot(state.beta) - clients.Y(i)) * x;
    const double n = g.norm();
    if (n > clip_c) g *= clip_c / n;
    RngStream rng(seed, StreamKey{std::uint64_t(state.round_index),
                                  std::uint64_t(i), Purpose::kDpSgd});
    for (Eigen::Index j = 0; j < d; ++j) g(j) += sigma_dp * rng.normal();
    sum += g;
  }
  return {state.beta - lr * (sum / double(k)), state.round_index + 1};
}

/// 1 - SS_res / SS_tot on `test`'s (standardized) response.
inline double RSquared(const Vector& beta, const Dataset& test) {
  if (test.num_clients() < 2) throw DataError("R^2 needs at least 2 rows");
  const Vector resid = test.Y - test.X * beta;
  const double ss_tot = (test.Y.array() - test.Y.mean()).square().sum();
  if (ss_tot <= 0.0) throw DataError("R^2 undefined for a constant target");
  return 1.0 - resid.squaredNorm() / ss_tot;
}

}  // namespace modfed
