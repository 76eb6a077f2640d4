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

// Experiment driver: synthetic data, split preparation, privacy sweeps over
// an epsilon grid for the three methods with joint hyperparameter tuning on
// the validation split, and the crossover summary.

#include <Eigen/QR>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "modfed/core_model.hpp"
#include "modfed/estimators.hpp"
#include "modfed/modulation.hpp"
#include "modfed/parallel.hpp"
#include "modfed/privacy_accounting.hpp"
#include "modfed/server_protocol.hpp"

namespace modfed {

enum class Method { kModulatedIterative, kModulatedOneShot, kDpSgd };

inline const char* MethodName(Method m) {
  switch (m) {
    case Method::kModulatedIterative:
      return "modulated_iterative";
    case Method::kModulatedOneShot:
      return "modulated_oneshot";
    case Method::kDpSgd:
      return "dpsgd";
  }
  return "unknown";
}

inline Method ParseMethod(const std::string& name) {
  for (Method m : {Method::kModulatedIterative, Method::kModulatedOneShot,
                   Method::kDpSgd}) {
    if (name == MethodName(m)) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

/// 0.5, 0.75, ..., 10.0.
inline std::vector<double> DefaultEpsGrid() {
  std::vector<double> g;
  for (int i = 2; i <= 40; ++i) g.push_back(0.25 * i);
  return g;
}

struct SweepConfig {
  std::vector<double> eps_grid = DefaultEpsGrid();
  double delta = kDefaultConversionDelta;
  int rounds = 10;
  BudgetMode budget_mode = BudgetMode::kZcdp;
  std::vector<Method> methods{Method::kModulatedIterative,
                              Method::kModulatedOneShot, Method::kDpSgd};
  // Modulation parameters shared by both modulated methods.
  ProtocolParams protocol;
  // Projection radius for the iterative method, in units of the feature
  // norm divisor (the raw-scale magnitude of beta grows with it).
  double clip_radius_factor = 10.0;
  std::vector<double> c_factors{0.25, 0.5, 0.8, 1.0};
  std::vector<double> ridge_gammas{0.001, 0.01, 0.03, 0.1, 0.3, 1.0};
  std::vector<double> clip_cs{0.25, 0.5, 1.0, 2.0};
  std::vector<double> learning_rates{1.0, 4.0, 16.0};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  void Validate() const {
    if (eps_grid.empty()) throw ConfigError("eps_grid must be non-empty");
    for (std::size_t i = 0; i < eps_grid.size(); ++i) {
      if (!(eps_grid[i] > 0.0) || !std::isfinite(eps_grid[i])) {
        throw ConfigError("eps values must be positive and finite");
      }
      if (i > 0 && !(eps_grid[i] > eps_grid[i - 1])) {
        throw ConfigError("eps_grid must be strictly ascending");
      }
    }
    CheckDelta(delta);
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (!(clip_radius_factor > 0.0)) {
      throw ConfigError("clip_radius_factor must be > 0");
    }
    auto positive = [](const std::vector<double>& g, const char* name,
                       bool allow_zero) {
      if (g.empty()) throw ConfigError(std::string(name) + " must be non-empty");
      for (double v : g) {
        if (!(allow_zero ? v >= 0.0 : v > 0.0) || !std::isfinite(v)) {
          throw ConfigError(std::string(name) + " has an invalid entry");
        }
      }
    };
    positive(c_factors, "c_factors", false);
    positive(ridge_gammas, "ridge_gammas", true);
    positive(clip_cs, "clip_cs", false);
    positive(learning_rates, "learning_rates", false);
    ProtocolParams p = protocol;
    p.rounds = rounds;
    p.Validate();
  }
};

/// One point of a method's tuning grid. Unused fields stay zero.
struct Hyperparams {
  double c_factor = 0.0;
  double ridge_gamma = 0.0;
  double clip_c = 0.0;
  double lr = 0.0;
};

inline std::vector<Hyperparams> TuningGrid(const SweepConfig& cfg, Method m) {
  std::vector<Hyperparams> g;
  switch (m) {
    case Method::kModulatedIterative:
      for (double c : cfg.c_factors) g.push_back({c, 0, 0, 0});
      break;
    case Method::kModulatedOneShot:
      for (double r : cfg.ridge_gammas) g.push_back({0, r, 0, 0});
      break;
    case Method::kDpSgd:
      for (double c : cfg.clip_cs) {
        for (double lr : cfg.learning_rates) g.push_back({0, 0, c, lr});
      }
      break;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Data

struct SyntheticData {
  Dataset data;
  Vector beta_star;
};

/// X rows ~ N(0, Q diag(s) Q^T) with a geometric spectrum s from 1 down to
/// 1 / conditioning and a random rotation Q; Y = X beta* + N(0, noise_sd^2).
inline SyntheticData GenerateSynthetic(Eigen::Index K, Eigen::Index d,
                                       double beta_star_norm, double noise_sd,
                                       double conditioning,
                                       std::uint64_t seed) {
  if (d < 1) throw ConfigError("d must be >= 1");
  if (K <= d) throw ConfigError("synthetic data needs K > d");
  if (!(beta_star_norm >= 0.0)) throw ConfigError("beta_star_norm must be >= 0");
  if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be >= 0");
  if (!(conditioning >= 1.0)) throw ConfigError("conditioning must be >= 1");
  RngStream rng(seed, StreamKey{0, 0, Purpose::kSynthetic});

  Matrix g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  Vector root(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double t = d > 1 ? double(j) / double(d - 1) : 0.0;
    root(j) = std::sqrt(std::pow(conditioning, -t));
  }
  const Matrix mix = root.asDiagonal() * q.transpose();

  Vector beta(d);
  for (Eigen::Index j = 0; j < d; ++j) beta(j) = rng.normal();
  beta *= beta_star_norm / beta.norm();

  Matrix z(K, d);
  for (Eigen::Index i = 0; i < K; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = rng.normal();
  }
  Matrix X = z * mix;
  Vector Y = X * beta;
  for (Eigen::Index i = 0; i < K; ++i) Y(i) += noise_sd * rng.normal();
  return {MakeDataset(std::move(X), std::move(Y)), beta};
}

/// Split, standardize with training statistics, then scale every split by the
/// training set's global norm divisor so training rows lie in the unit ball.
inline DataSplits PrepareSplits(const Dataset& data, SplitFractions f,
                                std::uint64_t seed) {
  DataSplits s = Split(data, f, seed);
  const ColumnScaling fs = FitColumnScaling(s.train.X);
  const TargetScaling ts = FitTargetScaling(s.train.Y);
  if (ts.constant) throw DataError("training target is constant");
  s.train = ApplyStandardization(s.train, fs, ts);
  s.val = ApplyStandardization(s.val, fs, ts);
  s.test = ApplyStandardization(s.test, fs, ts);
  s.train = ClipFeatures(s.train, NormControl::kGlobal);
  s.val = ApplyNormScaling(s.val, *s.train.norm_scaling);
  s.test = ApplyNormScaling(s.test, *s.train.norm_scaling);
  return s;
}

// ---------------------------------------------------------------------------
// Single training runs

struct TrainedModel {
  Vector beta;
  PrivacyBudget budget;
  PrivacyLedger ledger;
};

inline double FeatureDivisor(const Dataset& train) {
  return train.norm_scaling ? train.norm_scaling->divisor : 1.0;
}

inline PrivacyBudget Calibrate(BudgetMode mode, double eps, double delta,
                               int rounds, double sensitivity) {
  return mode == BudgetMode::kZcdp
             ? CalibrateZcdp(eps, delta, rounds, sensitivity)
             : CalibrateEpsDelta(eps, delta, rounds, sensitivity);
}

inline TrainedModel TrainIterative(const Dataset& train, const SweepConfig& cfg,
                                   double eps, double c_factor,
                                   std::uint64_t seed) {
  ProtocolParams p = cfg.protocol;
  p.rounds = cfg.rounds;
  p.step = StepRule::Adaptive(c_factor);
  p.clip_radius = cfg.clip_radius_factor * FeatureDivisor(train);
  const PrivacyBudget budget = Calibrate(cfg.budget_mode, eps, cfg.delta,
                                         cfg.rounds, LipschitzConstant(p));
  ProtocolRun run = RunProtocol(train, p, budget, seed, 1, false);
  return {run.final_state.beta, budget, std::move(run.ledger)};
}

inline TrainedModel TrainDpSgd(const Dataset& train, const SweepConfig& cfg,
                               double eps, double clip_c, double lr,
                               std::uint64_t seed) {
  const PrivacyBudget budget =
      Calibrate(cfg.budget_mode, eps, cfg.delta, cfg.rounds,
                ClippedGradientSensitivity(clip_c));
  TrainedModel out{Vector::Zero(train.dim()), budget, {}};
  ModelState state{out.beta, 0};
  for (int t = 0; t < cfg.rounds; ++t) {
    state = DpSgdFedAvgRound(state, train, clip_c, lr, budget.sigma_dp, seed);
    out.ledger.Record(t, budget);
  }
  out.beta = state.beta;
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow {
  Method method = Method::kModulatedIterative;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  double test_r2 = 0.0;
  double val_r2 = 0.0;
  Hyperparams hyper;
  std::size_t ledger_entries = 0;
  double ledger_rho = 0.0;
  double ledger_eps = 0.0;
  double sigma_dp = 0.0;
  double wall_seconds = 0.0;
};

struct TuningScore {
  Method method;
  Hyperparams hyper;
  double mean_val_r2;
};

struct SweepResult {
  std::vector<double> eps_grid;
  std::vector<Method> methods;
  double ols_test_r2 = 0.0;
  std::vector<TuningScore> tuning;
  std::vector<SweepRow> rows;  // selected configuration only
};

/// Per-method stream seed; shared across epsilon values and hyperparameters so
/// curves compare like with like.
inline std::uint64_t CellSeed(std::uint64_t seed, Method m) {
  return internal::Mix(seed, 0x6d6f6466ULL + std::uint64_t(m));
}

namespace internal {

struct CellEval {
  std::vector<SweepRow> per_config;
};

inline CellEval EvaluateCell(const DataSplits& s, const SweepConfig& cfg,
                             Method method, double eps, std::uint64_t seed,
                             const std::vector<Hyperparams>& grid) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t cs = CellSeed(seed, method);
  CellEval out;
  auto finish = [&](const Hyperparams& h, const Vector& beta,
                    const PrivacyBudget& budget, const PrivacyLedger& ledger) {
    // Accounting guard: the ledger must never exceed the declared budget.
    ledger.CheckWithin(budget, 1e-9);
    SweepRow r;
    r.method = method;
    r.epsilon = eps;
    r.seed = seed;
    r.hyper = h;
    r.val_r2 = RSquared(beta, s.val);
    r.test_r2 = RSquared(beta, s.test);
    r.ledger_entries = ledger.size();
    r.ledger_rho = ledger.total_rho();
    r.ledger_eps = ledger.epsilon(budget.delta);
    r.sigma_dp = budget.sigma_dp;
    out.per_config.push_back(r);
  };

  if (method == Method::kModulatedOneShot) {
    // One release serves every ridge value.
    ProtocolParams p = cfg.protocol;
    p.rounds = 1;
    const PrivacyBudget budget = Calibrate(cfg.budget_mode, eps, cfg.delta, 1,
                                           LipschitzConstant(p));
    RngStream vrng = OrthonormalStream(cs, 0);
    const OrthonormalSet V =
        MakeOrthonormalSet(s.train.dim(), p.m, nullptr, vrng);
    const PayloadBatch batch =
        SimulateClients(s.train, V, p, budget.sigma_dp, cs, 0);
    PrivacyLedger ledger;
    ledger.Record(0, budget);
    for (const auto& h : grid) {
      const OneShotResult r =
          OneShotEstimate(batch, V, p, budget.sigma_dp, h.ridge_gamma);
      finish(h, r.beta_hat, budget, ledger);
    }
  } else {
    for (const auto& h : grid) {
      TrainedModel m = method == Method::kModulatedIterative
                           ? TrainIterative(s.train, cfg, eps, h.c_factor, cs)
                           : TrainDpSgd(s.train, cfg, eps, h.clip_c, h.lr, cs);
      finish(h, m.beta, m.budget, m.ledger);
    }
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  for (auto& r : out.per_config) r.wall_seconds = wall;
  return out;
}

}  // namespace internal

/// Runs every (method, eps, seed) cell over the method's whole tuning grid,
/// selects per method the configuration with the highest mean validation R^2
/// across all eps and seeds, and reports test R^2 for that configuration.
inline SweepResult RunSweep(const SweepConfig& cfg, const DataSplits& splits,
                            int jobs = 1) {
  cfg.Validate();
  SweepResult res;
  res.eps_grid = cfg.eps_grid;
  res.methods = cfg.methods;
  res.ols_test_r2 = RSquared(Ols(splits.train), splits.test);

  struct Cell {
    Method method;
    std::size_t eps_idx;
    std::size_t seed_idx;
  };
  std::vector<Cell> cells;
  for (Method m : cfg.methods) {
    for (std::size_t e = 0; e < cfg.eps_grid.size(); ++e) {
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        cells.push_back({m, e, s});
      }
    }
  }
  std::vector<internal::CellEval> evals(cells.size());
  ParallelFor(cells.size(), jobs, [&](std::size_t i) {
    const Cell& c = cells[i];
    evals[i] = internal::EvaluateCell(splits, cfg, c.method,
                                      cfg.eps_grid[c.eps_idx],
                                      cfg.seeds[c.seed_idx],
                                      TuningGrid(cfg, c.method));
  });

  for (Method m : cfg.methods) {
    const auto grid = TuningGrid(cfg, m);
    std::vector<double> sum(grid.size(), 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].method != m) continue;
      ++n;
      for (std::size_t h = 0; h < grid.size(); ++h) {
        const double v = evals[i].per_config[h].val_r2;
        sum[h] += std::isfinite(v) ? v : -std::numeric_limits<double>::max();
      }
    }
    std::size_t best = 0;
    for (std::size_t h = 0; h < grid.size(); ++h) {
      res.tuning.push_back({m, grid[h], sum[h] / double(n)});
      if (sum[h] > sum[best]) best = h;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].method == m) res.rows.push_back(evals[i].per_config[best]);
    }
  }
  return res;
}

/// Median test R^2 over seeds for one (method, eps) cell; NaN when absent.
inline double MedianTestR2(const SweepResult& r, Method m, double eps) {
  std::vector<double> v;
  for (const auto& row : r.rows) {
    if (row.method == m && row.epsilon == eps) v.push_back(row.test_r2);
  }
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

struct CrossoverReport {
  std::vector<double> eps;
  std::vector<double> median_oneshot;
  std::vector<double> median_iterative;
  // Per eps: "oneshot", "iterative" or "tie".
  std::vector<std::string> dominant;
  bool crossover = false;
  std::optional<double> crossover_eps;  // first eps where the leader changes
  std::string summary;
};

inline CrossoverReport MakeCrossoverReport(const SweepResult& r) {
  auto has = [&](Method m) {
    return std::find(r.methods.begin(), r.methods.end(), m) != r.methods.end();
  };
  if (!has(Method::kModulatedIterative) || !has(Method::kModulatedOneShot)) {
    throw ConfigError("crossover report needs both modulated methods");
  }
  CrossoverReport rep;
  rep.eps = r.eps_grid;
  int prev = 0;
  for (double e : r.eps_grid) {
    const double o = MedianTestR2(r, Method::kModulatedOneShot, e);
    const double it = MedianTestR2(r, Method::kModulatedIterative, e);
    rep.median_oneshot.push_back(o);
    rep.median_iterative.push_back(it);
    const int lead = o > it ? 1 : (it > o ? -1 : 0);
    rep.dominant.push_back(lead > 0 ? "oneshot"
                                    : (lead < 0 ? "iterative" : "tie"));
    if (lead != 0) {
      if (prev != 0 && lead != prev && !rep.crossover) {
        rep.crossover = true;
        rep.crossover_eps = e;
      }
      prev = lead;
    }
  }
  if (r.eps_grid.size() < 2) {
    rep.summary = "no crossover detectable";
  } else if (rep.crossover) {
    rep.summary = "leader changes at eps = " + std::to_string(*rep.crossover_eps);
  } else {
    rep.summary = "no crossover: " +
                  std::string(prev > 0 ? "oneshot" : (prev < 0 ? "iterative" : "neither")) +
                  " leads throughout";
  }
  return rep;
}

}  // namespace modfed
