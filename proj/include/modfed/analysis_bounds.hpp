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

// Closed forms: gradient-estimator variance, its uniform bound, the
// projected-SGD convergence bound, and Cramer-Rao reconstruction bounds.

#include <cmath>
#include <string>

#include "modfed/core_model.hpp"

namespace modfed {

/// The data enter the variance only through three scalars.
struct VarianceInputs {
  double S_r_sq = 0.0;         // (1/K) ||X beta - Y||^2
  double beta_sigma_rx = 0.0;  // (1/K) beta^T X^T r
  double tr_sigma_x = 0.0;     // (1/K) ||X||_F^2
  double beta_norm_sq = 0.0;
  Eigen::Index K = 1;
  Eigen::Index d = 1;
  double alpha = 0.5;
  double lambda = 0.1;
  double sigma_dp = 0.0;

  static VarianceInputs FromData(const Matrix& X, const Vector& Y,
                                 const Vector& beta, const ProtocolParams& p,
                                 double sigma_dp) {
    VarianceInputs in;
    const double k = double(X.rows());
    const Vector r = X * beta - Y;
    in.S_r_sq = r.squaredNorm() / k;
    in.beta_sigma_rx = beta.dot(X.transpose() * r) / k;
    in.tr_sigma_x = X.squaredNorm() / k;
    in.beta_norm_sq = beta.squaredNorm();
    in.K = X.rows();
    in.d = X.cols();
    in.alpha = p.alpha;
    in.lambda = p.lambda;
    in.sigma_dp = sigma_dp;
    return in;
  }
};

/// E||G - grad L(beta)||^2 for the single-direction protocol with v orthogonal
/// to beta and fixed data.
inline double GradientVariance(const VarianceInputs& in) {
  if (in.S_r_sq < 0.0 || in.tr_sigma_x < 0.0) {
    throw ConfigError("variance inputs must be non-negative");
  }
  const double s2 = in.sigma_dp * in.sigma_dp;
  const double l2 = in.lambda * in.lambda;
  const double om = 1.0 - in.alpha;
  const double k = double(in.K);
  const double d = double(in.d);
  const double first = in.S_r_sq * (0.5 * l2 + d * s2) +
                       2.0 * s2 * in.beta_sigma_rx +
                       s2 * in.beta_norm_sq * in.tr_sigma_x;
  const double second = in.beta_norm_sq * (0.5 * l2 * s2 + (d + 1.0) * s2 * s2);
  return first / (k * om * om) + second / (k * om * om * om * om);
}

/// ||beta_t|| <= B, ||x_i|| <= R, |y_i| <= M.
struct BoundConstants {
  double B = 1.0;
  double R = 1.0;
  double M = 1.0;
};

/// Data-independent upper bound on GradientVariance under BoundConstants.
inline double UniformVarianceBound(const BoundConstants& c,
                                   const ProtocolParams& p, double sigma_dp,
                                   Eigen::Index K, Eigen::Index d) {
  if (!(c.B > 0 && c.R > 0 && c.M > 0)) {
    throw ConfigError("bound constants must be positive");
  }
  const double s2 = sigma_dp * sigma_dp;
  const double l2 = p.lambda * p.lambda;
  const double om = 1.0 - p.alpha;
  const double rbm = c.R * c.B + c.M;
  const double first = rbm * rbm * (0.5 * l2 + double(d) * s2) +
                       2.0 * s2 * c.B * c.R * rbm + s2 * c.B * c.B * c.R * c.R;
  const double second =
      c.B * c.B * (0.5 * l2 * s2 + (double(d) + 1.0) * s2 * s2);
  return first / (double(K) * om * om) +
         second / (double(K) * om * om * om * om);
}

/// Excess-risk bound for the averaged iterate with eta = 1 / L_dp:
/// L_dp ||beta_0 - beta*||^2 / (2T) + sigma_bar^2 / (2 L_dp K).
inline double ConvergenceBound(double l_dp, double beta0_dist_sq, int T,
                               double sigma_bar_sq, Eigen::Index K) {
  if (!(l_dp > 0.0)) throw ConfigError("L_DP must be > 0");
  if (T < 1) throw ConfigError("T must be >= 1");
  return l_dp * beta0_dist_sq / (2.0 * T) +
         sigma_bar_sq / (2.0 * l_dp * double(K));
}

/// c1 = -2 lambda omega (1 - alpha) sin(theta) + lambda^2 omega^2 sin^2(theta).
inline double C1Coefficient(double theta, const ProtocolParams& p) {
  const double s = std::sin(theta);
  const double lw = p.lambda * p.omega;
  return -2.0 * lw * (1.0 - p.alpha) * s + lw * lw * s * s;
}

/// Public knowledge an attacker holds about one client's release.
struct ReconstructionContext {
  ProtocolParams params;
  double sigma_dp = 1.0;
  Vector beta_star;
  double sigma_y = 1.0;
  Vector v;  // unit modulation direction

  void Validate() const {
    if (!(sigma_dp > 0.0)) throw ConfigError("sigma_dp must be > 0");
    if (!(sigma_y > 0.0)) throw ConfigError("sigma_y must be > 0");
    if (std::abs(v.norm() - 1.0) > 1e-9) {
      throw ConfigError("modulation direction must be a unit vector");
    }
    if (beta_star.size() != v.size()) {
      throw ConfigError("beta* and v disagree on d");
    }
  }
};

inline double ModulationPhase(const Vector& x, double phi,
                              const ReconstructionContext& ctx) {
  return ctx.params.omega * x.dot(ctx.v) + phi;
}

/// Jacobian of x -> g(x) at fixed phase: (1 - alpha) I - lambda omega sin(theta) v v^T.
inline Matrix ModulationJacobian(const Vector& x, double phi,
                                 const ReconstructionContext& ctx) {
  const double theta = ModulationPhase(x, phi, ctx);
  const auto& p = ctx.params;
  Matrix j = -p.lambda * p.omega * std::sin(theta) * (ctx.v * ctx.v.transpose());
  j.diagonal().array() += 1.0 - p.alpha;
  return j;
}

/// I(x) = (1/sigma_dp^2)[(1-alpha)^2 I + c1 v v^T] + beta* beta*^T / sigma_y^2.
inline Matrix FisherInformation(const Vector& x, double phi,
                                const ReconstructionContext& ctx) {
  ctx.Validate();
  const auto& p = ctx.params;
  const double c1 = C1Coefficient(ModulationPhase(x, phi, ctx), p);
  const double s2 = ctx.sigma_dp * ctx.sigma_dp;
  Matrix info = (c1 / s2) * (ctx.v * ctx.v.transpose());
  info.diagonal().array() += (1.0 - p.alpha) * (1.0 - p.alpha) / s2;
  info += ctx.beta_star * ctx.beta_star.transpose() / (ctx.sigma_y * ctx.sigma_y);
  return 0.5 * (info + info.transpose());
}

/// Per-dimension MSE lower bound for any unbiased reconstruction of x from
/// (g_tilde, y) at a fixed phase.
inline double CrbConditional(const Vector& x, double phi,
                             const ReconstructionContext& ctx) {
  ctx.Validate();
  const auto& p = ctx.params;
  const double d = double(x.size());
  const double c1 = C1Coefficient(ModulationPhase(x, phi, ctx), p);
  const double denom =
      ((1.0 - p.alpha) * (1.0 - p.alpha) + c1 / d) /
          (ctx.sigma_dp * ctx.sigma_dp) +
      ctx.beta_star.squaredNorm() / (d * ctx.sigma_y * ctx.sigma_y);
  if (!(denom > 0.0)) {
    throw NumericalError("Fisher information is degenerate (trace <= 0)");
  }
  return 1.0 / denom;
}

/// Phase-averaged bound, using E_phi[c1] = lambda^2 omega^2 / 2.
inline double CrbPhaseAveraged(const ReconstructionContext& ctx) {
  ctx.Validate();
  const auto& p = ctx.params;
  const double d = double(ctx.v.size());
  const double s2 = ctx.sigma_dp * ctx.sigma_dp;
  const double lw = p.lambda * p.omega;
  const double denom = (1.0 - p.alpha) * (1.0 - p.alpha) / s2 +
                       lw * lw / (2.0 * d * s2) +
                       ctx.beta_star.squaredNorm() /
                           (d * ctx.sigma_y * ctx.sigma_y);
  return 1.0 / denom;
}

}  // namespace modfed
