//------------------------------------------------------------------------------
//
//   Copyright 2026 The attnorm Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace attnorm {

/// The splitmix64 output finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
  z = (z ^ (z >> 30U)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27U)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31U);
}

/**
 * Portable splitmix64 stream.
 *
 * - next():        state += 0x9e3779b97f4a7c15, output mix64(state)
 * - uniform():     top 53 bits of next() scaled by 2^-53, in [0, 1)
 * - uniform_int(): rejection sampling on next(); values below
 *                  2^64 mod range are redrawn, the rest reduced modulo range
 * - normal():      Box-Muller on two uniform() draws, cosine branch only
 *
 * Sub-streams come from derive(seed, stream), which seeds a fresh generator
 * with mix64(seed + (stream + 1) * 0x9e3779b97f4a7c15) so that streams are
 * independent of draw order elsewhere.
 */
class RngStream
{
public:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  constexpr explicit RngStream(std::uint64_t seed = 0) noexcept
    : state_(seed)
  {}

  static constexpr RngStream derive(std::uint64_t seed, std::uint64_t stream) noexcept
  {
    return RngStream(mix64(seed + (stream + 1) * kGamma));
  }

  constexpr std::uint64_t next() noexcept
  {
    state_ += kGamma;
    return mix64(state_);
  }

  constexpr std::uint64_t state() const noexcept
  {
    return state_;
  }

  double uniform() noexcept
  {
    return static_cast<double>(next() >> 11U) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept
  {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer in [0, range).
  std::uint64_t uniform_int(std::uint64_t range)
  {
    if (range == 0)
    {
      throw std::domain_error("uniform_int range must be positive");
    }
    std::uint64_t const threshold = (0 - range) % range;
    for (;;)
    {
      std::uint64_t const x = next();
      if (x >= threshold)
      {
        return x % range;
      }
    }
  }

  double normal() noexcept
  {
    double const u1 = 1.0 - uniform();  // (0, 1]
    double const u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept
  {
    return mean + stddev * normal();
  }

  // UniformRandomBitGenerator interface
  using result_type = std::uint64_t;
  static constexpr result_type min() noexcept
  {
    return 0;
  }
  static constexpr result_type max() noexcept
  {
    return ~result_type{0};
  }
  result_type operator()() noexcept
  {
    return next();
  }

private:
  std::uint64_t state_;
};

}  // namespace attnorm
