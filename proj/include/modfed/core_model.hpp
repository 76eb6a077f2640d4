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

// Shared domain types: datasets, protocol parameters, model state, client
// payloads and orthonormal modulation sets.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modfed/errors.hpp"
#include "modfed/rng.hpp"

namespace modfed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Per-column affine standardization. `constant[j]` marks columns whose
/// sample standard deviation was zero; those are centered and left unscaled.
struct ColumnScaling {
  Vector mean;
  Vector scale;
  std::vector<bool> constant;
};

struct TargetScaling {
  double mean = 0.0;
  double scale = 1.0;
  bool constant = false;
};

enum class NormControl { kGlobal, kPerRow };

/// Feature-norm preprocessing. For kGlobal every row is divided by `divisor`
/// (the largest training row norm when it exceeds 1).
struct NormScaling {
  NormControl mode = NormControl::kGlobal;
  double divisor = 1.0;
};

/// The K one-sample clients: row i of X together with Y(i).
struct Dataset {
  Matrix X;
  Vector Y;
  std::optional<ColumnScaling> feature_scale;
  std::optional<TargetScaling> target_scale;
  std::optional<NormScaling> norm_scaling;

  Eigen::Index num_clients() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }

  void Validate() const {
    if (X.rows() < 1 || X.cols() < 1) {
      throw DataError("dataset needs K >= 1 rows and d >= 1 columns");
    }
    if (Y.size() != X.rows()) {
      throw DataError("dataset has " + std::to_string(X.rows()) +
                      " feature rows but " + std::to_string(Y.size()) +
                      " responses");
    }
    if (!X.allFinite() || !Y.allFinite()) {
      throw DataError("dataset contains non-finite entries");
    }
  }
};

inline Dataset MakeDataset(Matrix X, Vector Y) {
  Dataset d{std::move(X), std::move(Y), std::nullopt, std::nullopt,
            std::nullopt};
  d.Validate();
  return d;
}

enum class StepKind { kFixed, kAdaptive };

/// Server step policy: a fixed eta, or eta_t = c / ||Sigma_hat_x||_op.
struct StepRule {
  StepKind kind = StepKind::kAdaptive;
  double value = 0.8;

  static StepRule Fixed(double eta) { return {StepKind::kFixed, eta}; }
  static StepRule Adaptive(double c) { return {StepKind::kAdaptive, c}; }
};

/// Everything broadcast to clients besides the model.
struct ProtocolParams {
  double alpha = 0.5;
  double lambda = 0.1;
  double omega = 1.0;
  int m = 1;
  double clip_radius = kInf;
  StepRule step = StepRule::Adaptive(0.8);
  int rounds = 10;

  /// Checks parameter ranges against dimension `d`. When
  /// `orthogonal_to_beta` is set a nonzero beta forces m <= d - 1.
  void Validate(Eigen::Index d = -1, bool orthogonal_to_beta = false) const {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw ConfigError("alpha must lie in (0, 1)");
    }
    if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
    if (!(omega > 0.0)) throw ConfigError("omega must be > 0");
    if (m < 1) throw ConfigError("m must be >= 1");
    if (!(clip_radius > 0.0)) throw ConfigError("clip radius must be > 0");
    if (!(step.value > 0.0) || !std::isfinite(step.value)) {
      throw ConfigError("step value must be positive and finite");
    }
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (d > 0) {
      const Eigen::Index limit = orthogonal_to_beta ? d - 1 : d;
      if (m > limit) {
        throw ConfigError("m = " + std::to_string(m) +
                          " exceeds the allowed rank " +
                          std::to_string(limit) + " for d = " +
                          std::to_string(d));
      }
    }
  }
};

struct ModelState {
  Vector beta;
  int round_index = 0;
};

/// What one client transmits: the privatized feature and its public response.
struct ClientPayload {
  Vector g_tilde;
  double y = 0.0;
};

/// d x m matrix with orthonormal columns plus its cached projector V V^T.
class OrthonormalSet {
 public:
  OrthonormalSet() = default;

  explicit OrthonormalSet(Matrix v) : v_(std::move(v)) {
    if (v_.cols() < 1 || v_.rows() < v_.cols()) {
      throw ConfigError("orthonormal set needs 1 <= m <= d columns");
    }
    const Matrix gram = v_.transpose() * v_;
    const Matrix eye = Matrix::Identity(v_.cols(), v_.cols());
    if ((gram - eye).cwiseAbs().maxCoeff() > 1e-10) {
      throw ConfigError("columns are not orthonormal");
    }
    projector_ = v_ * v_.transpose();
  }

  const Matrix& V() const { return v_; }
  const Matrix& projector() const { return projector_; }
  Eigen::Index dim() const { return v_.rows(); }
  Eigen::Index size() const { return v_.cols(); }
  Vector column(Eigen::Index j) const { return v_.col(j); }

 private:
  Matrix v_;
  Matrix projector_;
};

// ---------------------------------------------------------------------------
// Standardization

inline ColumnScaling FitColumnScaling(const Matrix& X) {
  const Eigen::Index k = X.rows();
  if (k < 2) throw DataError("standardization needs K >= 2 rows");
  ColumnScaling s;
  s.mean = X.colwise().mean().transpose();
  s.scale = Vector::Ones(X.cols());
  s.constant.assign(static_cast<std::size_t>(X.cols()), false);
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double ss = (X.col(j).array() - s.mean(j)).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(k - 1));
    if (sd > 1e-12 * std::max(1.0, std::abs(s.mean(j)))) {
      s.scale(j) = sd;
    } else {
      s.constant[static_cast<std::size_t>(j)] = true;
    }
  }
  return s;
}

inline TargetScaling FitTargetScaling(const Vector& Y) {
  if (Y.size() < 2) throw DataError("standardization needs K >= 2 rows");
  TargetScaling t;
  t.mean = Y.mean();
  const double sd = std::sqrt((Y.array() - t.mean).square().sum() /
                              static_cast<double>(Y.size() - 1));
  if (sd > 1e-12 * std::max(1.0, std::abs(t.mean))) {
    t.scale = sd;
  } else {
    t.constant = true;
  }
  return t;
}

/// Applies previously fitted scaling (e.g. training statistics to a test split).
inline Dataset ApplyStandardization(const Dataset& data,
                                    const ColumnScaling& fs,
                                    const TargetScaling& ts) {
  Dataset out = data;
  out.X = ((data.X.rowwise() - fs.mean.transpose()).array().rowwise() /
           fs.scale.transpose().array())
              .matrix();
  out.Y = ((data.Y.array() - ts.mean) / ts.scale).matrix();
  out.feature_scale = fs;
  out.target_scale = ts;
  return out;
}

/// Centers every column and the response and divides by the sample standard
/// deviation (K - 1 denominator). Scaling metadata is kept for inversion.
inline Dataset Standardize(const Dataset& data) {
  data.Validate();
  return ApplyStandardization(data, FitColumnScaling(data.X),
                              FitTargetScaling(data.Y));
}

inline Dataset InverseStandardize(const Dataset& data) {
  if (!data.feature_scale || !data.target_scale) {
    throw DataError("dataset carries no standardization metadata");
  }
  const auto& fs = *data.feature_scale;
  const auto& ts = *data.target_scale;
  Dataset out = data;
  out.X = ((data.X.array().rowwise() * fs.scale.transpose().array())
               .matrix()
               .rowwise() +
           fs.mean.transpose());
  out.Y = (data.Y.array() * ts.scale + ts.mean).matrix();
  out.feature_scale.reset();
  out.target_scale.reset();
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

inline Dataset SelectRows(const Dataset& data,
                          const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), data.X.cols());
  out.Y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.X.row(r) = data.X.row(rows[i]);
    out.Y(r) = data.Y(rows[i]);
  }
  out.feature_scale = data.feature_scale;
  out.target_scale = data.target_scale;
  out.norm_scaling = data.norm_scaling;
  return out;
}

/// Disjoint random partition into train/validation/test, deterministic in
/// `seed`. Sizes are round(K * train), round(K * val) and the remainder.
inline DataSplits Split(const Dataset& data, SplitFractions f,
                        std::uint64_t seed) {
  data.Validate();
  if (!(f.train > 0 && f.val > 0 && f.test > 0) ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be positive and sum to 1");
  }
  const Eigen::Index k = data.num_clients();
  const auto n_train = static_cast<Eigen::Index>(
      std::llround(static_cast<double>(k) * f.train));
  const auto n_val = static_cast<Eigen::Index>(
      std::llround(static_cast<double>(k) * f.val));
  const Eigen::Index n_test = k - n_train - n_val;
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw DataError("K = " + std::to_string(k) +
                    " is too small to give every split at least one row");
  }
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  RngStream rng(seed, StreamKey{0, 0, Purpose::kSplit});
  // Fisher-Yates with an explicit uniform index so the permutation does not
  // depend on the standard library's shuffle.
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(
        std::min<double>(std::floor(rng.uniform01() * double(i + 1)),
                         double(i)));
    std::swap(perm[i], perm[j]);
  }
  auto slice = [&](std::size_t from, std::size_t n) {
    std::vector<Eigen::Index> rows(perm.begin() + std::ptrdiff_t(from),
                                   perm.begin() + std::ptrdiff_t(from + n));
    std::sort(rows.begin(), rows.end());
    return SelectRows(data, rows);
  };
  const auto nt = static_cast<std::size_t>(n_train);
  const auto nv = static_cast<std::size_t>(n_val);
  return {slice(0, nt), slice(nt, nv),
          slice(nt + nv, static_cast<std::size_t>(n_test))};
}

// ---------------------------------------------------------------------------
// Orthonormal modulation sets

/// Draws m orthonormal directions in R^d from a rotation-invariant law:
/// Gaussian columns, the `orthogonal_to` direction projected out when it is
/// nonzero, then modified Gram-Schmidt with a redraw for near-null columns.
inline OrthonormalSet MakeOrthonormalSet(Eigen::Index d, Eigen::Index m,
                                         const Vector* orthogonal_to,
                                         RngStream& rng) {
  if (d < 1 || m < 1) throw ConfigError("need d >= 1 and m >= 1");
  Vector u;
  if (orthogonal_to != nullptr) {
    if (orthogonal_to->size() != d) {
      throw ConfigError("orthogonality vector has the wrong dimension");
    }
    const double n = orthogonal_to->norm();
    if (n > 0.0) u = *orthogonal_to / n;
  }
  const Eigen::Index limit = u.size() > 0 ? d - 1 : d;
  if (m > limit) {
    throw ConfigError("cannot draw " + std::to_string(m) +
                      " orthonormal vectors with rank limit " +
                      std::to_string(limit));
  }
  Matrix v(d, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) {
        throw NumericalError("orthonormal set construction did not converge");
      }
      Vector c(d);
      for (Eigen::Index i = 0; i < d; ++i) c(i) = rng.normal();
      // Two passes of projection keep the columns orthogonal to rounding.
      for (int pass = 0; pass < 2; ++pass) {
        if (u.size() > 0) c -= u.dot(c) * u;
        for (Eigen::Index p = 0; p < j; ++p) {
          c -= v.col(p).dot(c) * v.col(p);
        }
      }
      const double n = c.norm();
      if (n >= 1e-8) {
        v.col(j) = c / n;
        break;
      }
    }
  }
  return OrthonormalSet(std::move(v));
}

inline OrthonormalSet MakeOrthonormalSet(Eigen::Index d, Eigen::Index m,
                                         const std::optional<Vector>& ortho,
                                         RngStream& rng) {
  return MakeOrthonormalSet(d, m, ortho ? &*ortho : nullptr, rng);
}

}  // namespace modfed
