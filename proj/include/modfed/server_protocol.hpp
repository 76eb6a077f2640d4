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

// Server side of the modulated protocol: aggregation of client releases,
// algebraic debiasing, the gradient estimate G = Sigma_hat_x beta - Z and the
// projected update, plus round orchestration.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "modfed/core_model.hpp"
#include "modfed/modulation.hpp"
#include "modfed/parallel.hpp"
#include "modfed/privacy_accounting.hpp"

namespace modfed {

/// All K client releases of one round, stacked row-wise.
struct PayloadBatch {
  Matrix g_tilde;  // K x d
  Vector y;        // K

  Eigen::Index size() const { return g_tilde.rows(); }

  static PayloadBatch FromPayloads(std::span<const ClientPayload> payloads) {
    if (payloads.empty()) throw DataError("need at least one payload");
    const auto d = payloads.front().g_tilde.size();
    PayloadBatch b{Matrix(Eigen::Index(payloads.size()), d),
                   Vector(Eigen::Index(payloads.size()))};
    for (std::size_t i = 0; i < payloads.size(); ++i) {
      if (payloads[i].g_tilde.size() != d) {
        throw DataError("payload dimensions disagree");
      }
      b.g_tilde.row(Eigen::Index(i)) = payloads[i].g_tilde.transpose();
      b.y(Eigen::Index(i)) = payloads[i].y;
    }
    return b;
  }

  ClientPayload payload(Eigen::Index i) const {
    return {g_tilde.row(i).transpose(), y(i)};
  }
};

/// The randomness behind a batch: phases (K x m) and Gaussian noise (K x d).
struct BatchTrace {
  Matrix phases;
  Matrix noise;
};

inline RngStream ClientStream(std::uint64_t seed, std::uint64_t round,
                              std::uint64_t client) {
  return RngStream(seed, StreamKey{round, client, Purpose::kClient});
}

inline RngStream OrthonormalStream(std::uint64_t seed, std::uint64_t round) {
  return RngStream(seed, StreamKey{round, 0, Purpose::kOrthonormal});
}

/// Runs every client's privatize step for one round. Client i draws from the
/// stream keyed (seed, round, i), so the result is independent of `jobs`.
inline PayloadBatch SimulateClients(const Dataset& clients,
                                    const OrthonormalSet& V,
                                    const ProtocolParams& p, double sigma_dp,
                                    std::uint64_t seed, std::uint64_t round,
                                    BatchTrace* trace = nullptr, int jobs = 1) {
  const Eigen::Index k = clients.num_clients();
  const Eigen::Index d = clients.dim();
  PayloadBatch batch{Matrix(k, d), clients.Y};
  if (trace != nullptr) {
    trace->phases.resize(k, V.size());
    trace->noise.resize(k, d);
  }
  ParallelFor(std::size_t(k), jobs, [&](std::size_t idx) {
    const auto i = Eigen::Index(idx);
    RngStream rng = ClientStream(seed, round, idx);
    ClientDraw draw =
        PrivatizeTraced(clients.X.row(i).transpose(), V, p, sigma_dp, rng);
    batch.g_tilde.row(i) = draw.g_tilde.transpose();
    if (trace != nullptr) {
      trace->phases.row(i) = draw.phases.transpose();
      trace->noise.row(i) = draw.noise.transpose();
    }
  });
  return batch;
}

/// Same as SimulateClients through the dedicated single-direction client map.
inline PayloadBatch SimulateClientsSingle(const Dataset& clients,
                                          const Vector& v,
                                          const ProtocolParams& p,
                                          double sigma_dp, std::uint64_t seed,
                                          std::uint64_t round) {
  const Eigen::Index k = clients.num_clients();
  PayloadBatch batch{Matrix(k, clients.dim()), clients.Y};
  for (Eigen::Index i = 0; i < k; ++i) {
    RngStream rng = ClientStream(seed, round, std::uint64_t(i));
    batch.g_tilde.row(i) =
        PrivatizeSingle(clients.X.row(i).transpose(), v, p, sigma_dp, rng)
            .transpose();
  }
  return batch;
}

/// (1/K) sum_i g_i g_i^T, symmetrized.
inline Matrix AggregateSecondMoment(const PayloadBatch& batch) {
  if (batch.size() < 1) throw DataError("need at least one payload");
  Matrix s = batch.g_tilde.transpose() * batch.g_tilde;
  s /= double(batch.size());
  return 0.5 * (s + s.transpose());
}

/// [S - (lambda^2 / 2m) P_V - sigma^2 I] / (1 - alpha)^2. Not projected to
/// the PSD cone: the estimate stays unbiased and may be indefinite.
inline Matrix DebiasCovariance(const Matrix& sigma_g_tilde,
                               const OrthonormalSet& V,
                               const ProtocolParams& p, double sigma_dp) {
  if (sigma_g_tilde.rows() != V.dim() || sigma_g_tilde.cols() != V.dim()) {
    throw ConfigError("second moment and modulation set disagree on d");
  }
  const double one_minus = 1.0 - p.alpha;
  const double mod = p.lambda * p.lambda / (2.0 * double(V.size()));
  Matrix out = sigma_g_tilde - mod * V.projector();
  out.diagonal().array() -= sigma_dp * sigma_dp;
  return out / (one_minus * one_minus);
}

/// Single-direction form: [S - (lambda^2 / 2) v v^T - sigma^2 I] / (1-alpha)^2.
inline Matrix DebiasCovarianceSingle(const Matrix& sigma_g_tilde,
                                     const Vector& v, const ProtocolParams& p,
                                     double sigma_dp) {
  const double one_minus = 1.0 - p.alpha;
  const double mod = p.lambda * p.lambda / 2.0;
  const Matrix vvt = v * v.transpose();
  Matrix out = sigma_g_tilde - mod * vvt;
  out.diagonal().array() -= sigma_dp * sigma_dp;
  return out / (one_minus * one_minus);
}

/// Z = (1 / (1 - alpha)) (1/K) sum_i y_i g_i.
inline Vector DebiasCrossMoment(const PayloadBatch& batch,
                                const ProtocolParams& p) {
  if (batch.size() < 1) throw DataError("need at least one payload");
  Vector z = batch.g_tilde.transpose() * batch.y;
  return z / ((1.0 - p.alpha) * double(batch.size()));
}

struct DebiasedMoments {
  Matrix sigma_g_tilde;
  Matrix sigma_x_hat;
  Vector Z;
  Vector G;
};

inline Vector GradientEstimate(const Matrix& sigma_x_hat, const Vector& Z,
                               const Vector& beta) {
  if (beta.size() != Z.size() || sigma_x_hat.cols() != beta.size()) {
    throw ConfigError("gradient inputs disagree on d");
  }
  return sigma_x_hat * beta - Z;
}

inline Vector GradientEstimate(const DebiasedMoments& m, const Vector& beta) {
  return GradientEstimate(m.sigma_x_hat, m.Z, beta);
}

inline DebiasedMoments ComputeMoments(const PayloadBatch& batch,
                                      const OrthonormalSet& V,
                                      const ProtocolParams& p, double sigma_dp,
                                      const Vector& beta) {
  DebiasedMoments m;
  m.sigma_g_tilde = AggregateSecondMoment(batch);
  m.sigma_x_hat = DebiasCovariance(m.sigma_g_tilde, V, p, sigma_dp);
  m.Z = DebiasCrossMoment(batch, p);
  m.G = GradientEstimate(m.sigma_x_hat, m.Z, beta);
  return m;
}

/// beta - step G, then projected onto the ball of radius c (c may be +inf).
inline Vector UpdateBeta(const Vector& beta, const Vector& G, double step,
                         double clip_radius) {
  if (!(step > 0.0)) throw ConfigError("step must be > 0");
  if (!(clip_radius > 0.0)) throw ConfigError("clip radius must be > 0");
  Vector next = beta - step * G;
  const double n = next.norm();
  if (n > clip_radius) next *= clip_radius / n;
  return next;
}

/// Largest absolute eigenvalue of the symmetrized matrix.
inline double OperatorNorm(const Matrix& a) {
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw NumericalError("eigenvalue computation failed");
  }
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// eta_t = c / ||Sigma_hat_x||_op.
inline double AdaptiveStep(const Matrix& sigma_x_hat, double c_factor) {
  const double op = OperatorNorm(sigma_x_hat);
  if (op < 1e-12) {
    throw NumericalError("degenerate round: ||Sigma_hat_x||_op below 1e-12");
  }
  return c_factor / op;
}

/// eta = 1 / lambda_max(Sigma_x), the step used by the convergence bound.
inline double CurvatureStep(const Matrix& sigma_x) {
  return 1.0 / OperatorNorm(sigma_x);
}

inline double StepSize(const StepRule& rule, const Matrix& sigma_x_hat) {
  return rule.kind == StepKind::kFixed ? rule.value
                                       : AdaptiveStep(sigma_x_hat, rule.value);
}

/// Everything the server knows after one round.
struct RoundRecord {
  int round = 0;
  Matrix V;
  DebiasedMoments moments;
  double step = 0.0;
  Vector beta_before;
  Vector beta_after;
  double sigma_dp = 0.0;
  double rho_spent = 0.0;
  double rho_cumulative = 0.0;
};

struct RoundOutcome {
  ModelState state;
  RoundRecord record;
};

/// One full round: draw V_t orthogonal to beta_t, privatize every client,
/// aggregate, debias, step, clip, and charge the ledger.
inline RoundOutcome RunRound(const ModelState& state, const Dataset& clients,
                             const ProtocolParams& p,
                             const PrivacyBudget& budget, std::uint64_t seed,
                             PrivacyLedger& ledger, int jobs = 1) {
  const Eigen::Index d = clients.dim();
  if (state.beta.size() != d) throw ConfigError("beta has the wrong dimension");
  if (!(budget.sigma_dp > 0.0)) {
    throw ConfigError("run needs a calibrated sigma_dp > 0");
  }
  p.Validate(d, state.beta.norm() > 0.0);
  const auto round = std::uint64_t(state.round_index);
  RngStream vrng = OrthonormalStream(seed, round);
  const OrthonormalSet V = MakeOrthonormalSet(d, p.m, &state.beta, vrng);
  const PayloadBatch batch =
      SimulateClients(clients, V, p, budget.sigma_dp, seed, round, nullptr, jobs);

  RoundRecord rec;
  rec.round = state.round_index;
  rec.V = V.V();
  rec.moments = ComputeMoments(batch, V, p, budget.sigma_dp, state.beta);
  rec.step = StepSize(p.step, rec.moments.sigma_x_hat);
  rec.beta_before = state.beta;
  rec.beta_after =
      UpdateBeta(state.beta, rec.moments.G, rec.step, p.clip_radius);
  rec.sigma_dp = budget.sigma_dp;
  ledger.Record(state.round_index, budget);
  rec.rho_spent = budget.rho_per_round;
  rec.rho_cumulative = ledger.total_rho();
  return {ModelState{rec.beta_after, state.round_index + 1}, std::move(rec)};
}

/// m = 1 round through the dedicated single-direction client map and server
/// correction. Shares RunRound's streams, so the two agree bit for bit.
inline RoundOutcome RunRoundSingleVector(const ModelState& state,
                                         const Dataset& clients,
                                         const ProtocolParams& p,
                                         double sigma_dp, std::uint64_t seed) {
  if (p.m != 1) throw ConfigError("single-vector round needs m = 1");
  const Eigen::Index d = clients.dim();
  const auto round = std::uint64_t(state.round_index);
  RngStream vrng = OrthonormalStream(seed, round);
  const Vector v = MakeOrthonormalSet(d, 1, &state.beta, vrng).V().col(0);
  const PayloadBatch batch =
      SimulateClientsSingle(clients, v, p, sigma_dp, seed, round);

  RoundRecord rec;
  rec.round = state.round_index;
  rec.V = v;
  rec.moments.sigma_g_tilde = AggregateSecondMoment(batch);
  rec.moments.sigma_x_hat =
      DebiasCovarianceSingle(rec.moments.sigma_g_tilde, v, p, sigma_dp);
  rec.moments.Z = DebiasCrossMoment(batch, p);
  rec.moments.G = GradientEstimate(rec.moments.sigma_x_hat, rec.moments.Z,
                                   state.beta);
  rec.step = StepSize(p.step, rec.moments.sigma_x_hat);
  rec.beta_before = state.beta;
  rec.beta_after =
      UpdateBeta(state.beta, rec.moments.G, rec.step, p.clip_radius);
  rec.sigma_dp = sigma_dp;
  return {ModelState{rec.beta_after, state.round_index + 1}, std::move(rec)};
}

struct ProtocolRun {
  ModelState final_state;
  std::vector<RoundRecord> rounds;
  PrivacyLedger ledger;
};

/// T = p.rounds rounds from beta = 0.
inline ProtocolRun RunProtocol(const Dataset& clients, const ProtocolParams& p,
                               const PrivacyBudget& budget, std::uint64_t seed,
                               int jobs = 1, bool keep_records = true) {
  ProtocolRun run;
  run.final_state = ModelState{Vector::Zero(clients.dim()), 0};
  for (int t = 0; t < p.rounds; ++t) {
    RoundOutcome out =
        RunRound(run.final_state, clients, p, budget, seed, run.ledger, jobs);
    run.final_state = std::move(out.state);
    if (keep_records) run.rounds.push_back(std::move(out.record));
  }
  return run;
}

}  // namespace modfed
