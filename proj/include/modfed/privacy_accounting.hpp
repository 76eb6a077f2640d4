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

// Noise calibration, zCDP composition and conversion, the (eps, delta)
// trade-off curve, and the feature-norm preprocessing that backs the
// ||x - x'|| <= 1 adjacency relation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "modfed/core_model.hpp"

namespace modfed {

inline constexpr double kDefaultConversionDelta = 1e-5;

inline void CheckDelta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ConfigError("delta must lie in (0, 1)");
  }
}

/// Classical Gaussian mechanism: sigma = L sqrt(2 ln(1.25 / delta)) / eps.
inline double GaussianSigmaForEpsDelta(double sensitivity, double eps,
                                       double delta) {
  if (!(sensitivity > 0.0)) throw ConfigError("sensitivity must be > 0");
  if (!(eps > 0.0)) throw ConfigError("epsilon must be > 0");
  CheckDelta(delta);
  return sensitivity * std::sqrt(2.0 * std::log(1.25 / delta)) / eps;
}

/// rho-zCDP Gaussian mechanism: sigma^2 = L^2 / (2 rho).
inline double GaussianSigmaForZcdp(double sensitivity, double rho) {
  if (!(sensitivity > 0.0)) throw ConfigError("sensitivity must be > 0");
  if (!(rho > 0.0)) throw ConfigError("rho must be > 0");
  return sensitivity / std::sqrt(2.0 * rho);
}

/// Sequential composition across rounds. Clients within a round hold
/// disjoint data, so parallel composition adds nothing there.
inline double ComposeZcdp(std::span<const double> per_round_rhos) {
  double total = 0.0;
  for (double r : per_round_rhos) {
    if (!(r > 0.0)) throw ConfigError("per-round rho must be > 0");
    total += r;
  }
  return total;
}

/// rho-zCDP implies (rho + 2 sqrt(rho ln(1/delta)), delta)-DP.
inline double ZcdpToEps(double rho, double delta) {
  if (!(rho >= 0.0)) throw ConfigError("rho must be >= 0");
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw ConfigError("delta must lie in (0, 1]");
  }
  return rho + 2.0 * std::sqrt(rho * std::log(1.0 / delta));
}

/// Inverse of ZcdpToEps: the largest rho with rho + 2 sqrt(rho l) = eps,
/// l = ln(1/delta). Solved as a quadratic in sqrt(rho).
inline double EpsToZcdp(double eps, double delta) {
  if (!(eps > 0.0)) throw ConfigError("epsilon must be > 0");
  CheckDelta(delta);
  const double l = std::log(1.0 / delta);
  // sqrt(rho) = -sqrt(l) + sqrt(l + eps), written without cancellation.
  const double root = eps / (std::sqrt(l) + std::sqrt(l + eps));
  if (!(root > 0.0)) {
    throw AccountingError("no positive zCDP budget for epsilon " +
                          std::to_string(eps));
  }
  return root * root;
}

/// Sensitivity of a per-sample gradient clipped to norm C (replacement).
inline double ClippedGradientSensitivity(double clip_c) { return 2.0 * clip_c; }

enum class BudgetMode { kEpsDelta, kZcdp };

/// A calibrated privacy budget for a T-round run.
///
/// kZcdp: the (eps, delta) target is converted to rho_total, split uniformly
/// into rho_total / T per round, and sigma = L / sqrt(2 rho_t).
/// kEpsDelta: the classical Gaussian mechanism at (eps / T, delta / T) per
/// round, composed with basic composition.
struct PrivacyBudget {
  BudgetMode mode = BudgetMode::kZcdp;
  double epsilon = 0.0;
  double delta = kDefaultConversionDelta;
  int rounds = 1;
  double rho_total = 0.0;
  double rho_per_round = 0.0;
  double eps_per_round = 0.0;
  double delta_per_round = 0.0;
  double sensitivity = 0.0;
  double sigma_dp = 0.0;
};

struct RoundRhoSplit {
  double rho_total;
  double rho_per_round;
  double sigma_dp;
};

/// Uniform split of an (eps_total, delta) target over T rounds.
inline RoundRhoSplit EpsBudgetToPerRoundRho(double eps_total, double delta,
                                            int rounds, double sensitivity) {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  const double rho = EpsToZcdp(eps_total, delta);
  const double rho_t = rho / double(rounds);
  return {rho, rho_t, GaussianSigmaForZcdp(sensitivity, rho_t)};
}

inline PrivacyBudget CalibrateZcdp(double eps_total, double delta, int rounds,
                                   double sensitivity) {
  const RoundRhoSplit split =
      EpsBudgetToPerRoundRho(eps_total, delta, rounds, sensitivity);
  PrivacyBudget b;
  b.mode = BudgetMode::kZcdp;
  b.epsilon = eps_total;
  b.delta = delta;
  b.rounds = rounds;
  b.rho_total = split.rho_total;
  b.rho_per_round = split.rho_per_round;
  b.sensitivity = sensitivity;
  b.sigma_dp = split.sigma_dp;
  return b;
}

inline PrivacyBudget CalibrateEpsDelta(double eps_total, double delta,
                                       int rounds, double sensitivity) {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  CheckDelta(delta);
  PrivacyBudget b;
  b.mode = BudgetMode::kEpsDelta;
  b.epsilon = eps_total;
  b.delta = delta;
  b.rounds = rounds;
  b.eps_per_round = eps_total / double(rounds);
  b.delta_per_round = delta / double(rounds);
  b.sensitivity = sensitivity;
  b.sigma_dp =
      GaussianSigmaForEpsDelta(sensitivity, b.eps_per_round, b.delta_per_round);
  return b;
}

/// Single-owner ledger of what a run has actually released.
class PrivacyLedger {
 public:
  struct Entry {
    int round;
    double rho;
    double eps;
    double delta;
  };

  void RecordZcdp(int round, double rho) {
    if (!(rho > 0.0)) throw AccountingError("recorded rho must be > 0");
    entries_.push_back({round, rho, 0.0, 0.0});
  }

  void RecordEpsDelta(int round, double eps, double delta) {
    entries_.push_back({round, 0.0, eps, delta});
  }

  /// Records one round of `budget`'s per-round spend.
  void Record(int round, const PrivacyBudget& budget) {
    if (budget.mode == BudgetMode::kZcdp) {
      RecordZcdp(round, budget.rho_per_round);
    } else {
      RecordEpsDelta(round, budget.eps_per_round, budget.delta_per_round);
    }
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  double total_rho() const {
    std::vector<double> rhos;
    for (const auto& e : entries_) {
      if (e.rho > 0.0) rhos.push_back(e.rho);
    }
    return ComposeZcdp(rhos);
  }

  /// (eps, delta) spent so far: zCDP entries converted at `delta`, classical
  /// entries added by basic composition.
  double epsilon(double delta) const {
    double eps = 0.0;
    for (const auto& e : entries_) eps += e.eps;
    const double rho = total_rho();
    if (rho > 0.0) eps += ZcdpToEps(rho, delta);
    return eps;
  }

  /// Throws AccountingError when the spend exceeds the declared target.
  void CheckWithin(const PrivacyBudget& budget, double tol = 1e-9) const {
    const double spent = epsilon(budget.delta);
    if (spent > budget.epsilon + tol) {
      throw AccountingError("privacy ledger spent epsilon " +
                            std::to_string(spent) + " above the declared " +
                            std::to_string(budget.epsilon));
    }
  }

 private:
  std::vector<Entry> entries_;
};

/// Hypothesis-testing trade-off curve of (eps, delta)-DP:
/// f(a) = max{0, 1 - delta - e^eps a, e^-eps (1 - delta - a)}.
inline double TradeoffCurve(double eps, double delta, double type1) {
  if (!(eps >= 0.0) || !(delta >= 0.0 && delta <= 1.0) ||
      !(type1 >= 0.0 && type1 <= 1.0)) {
    throw ConfigError("trade-off curve needs eps >= 0, delta, alpha in [0,1]");
  }
  return std::max({0.0, 1.0 - delta - std::exp(eps) * type1,
                   std::exp(-eps) * (1.0 - delta - type1)});
}

inline Dataset ApplyNormScaling(const Dataset& data, const NormScaling& s) {
  Dataset out = data;
  if (s.mode == NormControl::kGlobal) {
    out.X /= s.divisor;
  } else {
    for (Eigen::Index i = 0; i < out.X.rows(); ++i) {
      const double n = out.X.row(i).norm();
      if (n > 1.0) out.X.row(i) /= n;
    }
  }
  out.norm_scaling = s;
  return out;
}

/// Brings every row to ||x_i|| <= 1. kGlobal divides the whole matrix by the
/// largest row norm (when above 1), kPerRow projects each row onto the unit
/// ball. The applied scaling is recorded on the result.
inline Dataset ClipFeatures(const Dataset& data,
                            NormControl mode = NormControl::kGlobal) {
  NormScaling s{mode, 1.0};
  if (mode == NormControl::kGlobal) {
    const double max_norm = data.X.rowwise().norm().maxCoeff();
    s.divisor = std::max(1.0, max_norm);
  }
  Dataset out = ApplyNormScaling(data, s);
  if (mode == NormControl::kGlobal) {
    // Division can land a hair above 1 for the maximal row.
    for (Eigen::Index i = 0; i < out.X.rows(); ++i) {
      const double n = out.X.row(i).norm();
      if (n > 1.0) out.X.row(i) /= n;
    }
  }
  return out;
}

}  // namespace modfed
