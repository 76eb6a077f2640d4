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

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

namespace modfed {

// Named purposes keep streams for different jobs disjoint even when they share
// (seed, round, client).
enum class Purpose : std::uint64_t {
  kClient = 1,
  kOrthonormal = 2,
  kSplit = 3,
  kSynthetic = 4,
  kDpSgd = 5,
  kValidation = 6,
  kAnalysis = 7,
};

struct StreamKey {
  std::uint64_t round = 0;
  std::uint64_t client = 0;
  Purpose purpose = Purpose::kClient;
};

namespace internal {

constexpr std::uint64_t SplitMix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t Mix(std::uint64_t h, std::uint64_t v) {
  std::uint64_t s = h ^ (v + 0x632be59bd9b4e019ULL + (h << 6) + (h >> 2));
  return SplitMix64(s);
}

}  // namespace internal

// xoshiro256** bit generator. Satisfies UniformRandomBitGenerator so the
// standard distributions can sit on top of it.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Xoshiro256(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = internal::SplitMix64(sm);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() {
    const std::uint64_t result = Rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = Rotl(s_[3], 45);
    return result;
  }

 private:
  static constexpr std::uint64_t Rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
};

/// A reproducible random stream. Identical (seed, key) pairs yield identical
/// draws no matter which thread or in which order streams are consumed.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamKey key)
      : seed_(seed), key_(key), engine_(Derive(seed, key)) {}

  explicit RngStream(std::uint64_t seed)
      : RngStream(seed, StreamKey{0, 0, Purpose::kAnalysis}) {}

  std::uint64_t seed() const { return seed_; }
  const StreamKey& key() const { return key_; }

  double uniform01() { return unif_(engine_); }

  // Phase in [0, 2pi).
  double phase() {
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    double p = kTwoPi * unif_(engine_);
    return p < kTwoPi ? p : 0.0;
  }

  double normal() { return normal_(engine_); }

  Xoshiro256& engine() { return engine_; }

 private:
  static std::uint64_t Derive(std::uint64_t seed, const StreamKey& key) {
    std::uint64_t h = internal::Mix(0x5851f42d4c957f2dULL, seed);
    h = internal::Mix(h, key.round);
    h = internal::Mix(h, key.client);
    h = internal::Mix(h, static_cast<std::uint64_t>(key.purpose));
    return h;
  }

  std::uint64_t seed_;
  StreamKey key_;
  Xoshiro256 engine_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace modfed
