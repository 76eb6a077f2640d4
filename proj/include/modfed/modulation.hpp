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

// Client-side map. The noise-free modulated transform
//
//   g(x) = (1 - alpha) x + (lambda / sqrt(m)) sum_j cos(omega <x, v_j> + phi_j) v_j
//
// and its Gaussian-perturbed release g(x) + N(0, sigma^2 I).

#include <cmath>
#include <numbers>

#include "modfed/core_model.hpp"

namespace modfed {

/// Phases phi_1..phi_m, each in [0, 2pi).
struct PhaseVector {
  Vector values;

  static PhaseVector Draw(Eigen::Index m, RngStream& rng) {
    PhaseVector p{Vector(m)};
    for (Eigen::Index j = 0; j < m; ++j) p.values(j) = rng.phase();
    return p;
  }

  Eigen::Index size() const { return values.size(); }
};

/// Output of one client's privatized release, with the randomness that
/// produced it (validators need the phases and noise).
struct ClientDraw {
  Vector g_tilde;
  Vector phases;
  Vector noise;
};

inline double LipschitzConstant(double alpha, double lambda, double omega,
                                int m) {
  return std::abs(1.0 - alpha) + lambda * omega / std::sqrt(double(m));
}

/// Global l2 sensitivity of the noise-free map under ||x - x'|| <= 1.
inline double LipschitzConstant(const ProtocolParams& p) {
  return LipschitzConstant(p.alpha, p.lambda, p.omega, p.m);
}

/// Multi-vector modulated map. m is taken from V.
inline Vector Modulate(const Eigen::Ref<const Vector>& x,
                       const OrthonormalSet& V, const PhaseVector& phases,
                       const ProtocolParams& p) {
  if (x.size() != V.dim()) {
    throw ConfigError("feature dimension does not match the modulation set");
  }
  if (phases.size() != V.size()) {
    throw ConfigError("phase vector length must equal m");
  }
  const double scale = p.lambda / std::sqrt(double(V.size()));
  Vector out = (1.0 - p.alpha) * x;
  for (Eigen::Index j = 0; j < V.size(); ++j) {
    const auto vj = V.V().col(j);
    const double coef = scale * std::cos(p.omega * vj.dot(x) + phases.values(j));
    out += coef * vj;
  }
  return out;
}

/// Dedicated single-direction map (m = 1). Kept separate from Modulate so the
/// reduction of the multi-vector path can be checked against it.
inline Vector ModulateSingle(const Eigen::Ref<const Vector>& x,
                             const Eigen::Ref<const Vector>& v, double phi,
                             const ProtocolParams& p) {
  if (x.size() != v.size()) {
    throw ConfigError("feature dimension does not match the direction");
  }
  Vector out = (1.0 - p.alpha) * x;
  const double coef = p.lambda * std::cos(p.omega * v.dot(x) + phi);
  out += coef * v;
  return out;
}

/// Samples fresh phases and Gaussian noise from `rng` (phases first, then
/// d normals) and returns the release with its randomness.
inline ClientDraw PrivatizeTraced(const Eigen::Ref<const Vector>& x,
                                  const OrthonormalSet& V,
                                  const ProtocolParams& p, double sigma_dp,
                                  RngStream& rng) {
  if (!(sigma_dp >= 0.0)) throw ConfigError("sigma_dp must be >= 0");
  ClientDraw draw;
  PhaseVector phases = PhaseVector::Draw(V.size(), rng);
  draw.g_tilde = Modulate(x, V, phases, p);
  draw.noise.resize(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    draw.noise(i) = sigma_dp * rng.normal();
  }
  draw.g_tilde += draw.noise;
  draw.phases = std::move(phases.values);
  return draw;
}

inline Vector Privatize(const Eigen::Ref<const Vector>& x,
                        const OrthonormalSet& V, const ProtocolParams& p,
                        double sigma_dp, RngStream& rng) {
  return PrivatizeTraced(x, V, p, sigma_dp, rng).g_tilde;
}

/// Single-direction release drawing from the stream in the same order as
/// PrivatizeTraced.
inline Vector PrivatizeSingle(const Eigen::Ref<const Vector>& x,
                              const Eigen::Ref<const Vector>& v,
                              const ProtocolParams& p, double sigma_dp,
                              RngStream& rng) {
  const double phi = rng.phase();
  Vector out = ModulateSingle(x, v, phi, p);
  Vector noise(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) noise(i) = sigma_dp * rng.normal();
  out += noise;
  return out;
}

/// E_phi ||g(x) - g(x')||^2 for the single-direction map:
/// (1 - alpha)^2 ||x - x'||^2 + 2 lambda^2 sin^2(delta / 2),
/// delta = omega <x - x', v>.
inline double ExpectedPairDistanceSq(const Eigen::Ref<const Vector>& x,
                                     const Eigen::Ref<const Vector>& x_prime,
                                     const Eigen::Ref<const Vector>& v,
                                     const ProtocolParams& p) {
  if (std::abs(v.norm() - 1.0) > 1e-9) {
    throw ConfigError("direction must be a unit vector");
  }
  const Vector h = x - x_prime;
  const double delta = p.omega * h.dot(v);
  const double s = std::sin(0.5 * delta);
  return (1.0 - p.alpha) * (1.0 - p.alpha) * h.squaredNorm() +
         2.0 * p.lambda * p.lambda * s * s;
}

}  // namespace modfed
