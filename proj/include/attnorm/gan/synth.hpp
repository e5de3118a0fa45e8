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

#include "attnorm/rng.hpp"
#include "attnorm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace attnorm::gan {

/**
 * Synthetic 32x32 single-channel classes, each with a long-range
 * constraint:
 *   0  blob pair mirrored left-right
 *   1  blob pair mirrored through the image centre
 *   2  vertical stripes with a common period (4..8 px)
 *   3  ring centred on the vertical axis, both arcs sharing one thickness
 * Background is -1; per-pixel noise is uniform in [-noise, noise], so a
 * symmetric pixel pair differs by at most 2 * noise.
 */
struct SynthSpec
{
  std::size_t   num_classes = 4;
  std::size_t   side        = 32;
  double        noise       = 0.05;
  std::uint64_t seed        = 0;

  double jitter_bound() const
  {
    return 2.0 * noise + 1e-9;
  }
};

namespace detail {

inline double blob(double i, double j, double ci, double cj, double r)
{
  double const di = i - ci;
  double const dj = j - cj;
  return std::exp(-(di * di + dj * dj) / (2.0 * r * r));
}

}  // namespace detail

/// One image [side, side, 1] with values in [-1, 1]. Consumes draws from `rng`.
inline Tensor synth_sample(SynthSpec const &spec, std::size_t class_id, RngStream &rng)
{
  if (class_id >= spec.num_classes || class_id > 3)
  {
    throw DomainError("unknown synthetic class " + std::to_string(class_id));
  }
  std::size_t const S    = spec.side;
  double const      last = static_cast<double>(S - 1);
  std::vector<double> pattern(S * S, 0.0);
  auto at = [&](std::size_t i, std::size_t j) -> double & { return pattern[i * S + j]; };

  switch (class_id)
  {
  case 0: {
    double const cj = rng.uniform(4.0, 11.0);
    double const ci = rng.uniform(6.0, last - 6.0);
    double const r  = rng.uniform(2.5, 4.5);
    for (std::size_t i = 0; i < S; ++i)
    {
      for (std::size_t j = 0; j < S; ++j)
      {
        auto const di = static_cast<double>(i), dj = static_cast<double>(j);
        at(i, j) = std::max(detail::blob(di, dj, ci, cj, r), detail::blob(di, dj, ci, last - cj, r));
      }
    }
    break;
  }
  case 1: {
    double const cj = rng.uniform(5.0, 13.0);
    double const ci = rng.uniform(5.0, 13.0);
    double const r  = rng.uniform(2.5, 4.5);
    for (std::size_t i = 0; i < S; ++i)
    {
      for (std::size_t j = 0; j < S; ++j)
      {
        auto const di = static_cast<double>(i), dj = static_cast<double>(j);
        at(i, j) = std::max(detail::blob(di, dj, ci, cj, r),
                            detail::blob(di, dj, last - ci, last - cj, r));
      }
    }
    break;
  }
  case 2: {
    auto const   period = static_cast<double>(4 + rng.uniform_int(5));
    double const phase  = rng.uniform(0.0, period);
    for (std::size_t i = 0; i < S; ++i)
    {
      for (std::size_t j = 0; j < S; ++j)
      {
        at(i, j) = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(j) - phase) / period);
      }
    }
    break;
  }
  default: {
    double const ci    = last / 2.0 + rng.uniform(-2.0, 2.0);
    double const cj    = last / 2.0;
    double const R     = rng.uniform(7.0, 11.0);
    double const thick = rng.uniform(1.5, 3.0);
    for (std::size_t i = 0; i < S; ++i)
    {
      for (std::size_t j = 0; j < S; ++j)
      {
        double const di = static_cast<double>(i) - ci;
        double const dj = std::abs(static_cast<double>(j) - cj);
        double const d  = std::sqrt(di * di + dj * dj) - R;
        at(i, j)        = std::exp(-(d * d) / (2.0 * (thick / 2.0) * (thick / 2.0)));
      }
    }
    break;
  }
  }

  std::vector<double> img(S * S);
  for (std::size_t k = 0; k < img.size(); ++k)
  {
    double const v = -1.0 + 2.0 * std::clamp(pattern[k], 0.0, 1.0) + rng.uniform(-spec.noise, spec.noise);
    img[k]         = std::clamp(v, -1.0, 1.0);
  }
  return Tensor({S, S, 1}, std::move(img));
}

/// Draw counter over a fixed seed: sample k always uses RngStream::derive(seed, k).
class SynthSource
{
public:
  explicit SynthSource(SynthSpec spec)
    : spec_(spec)
  {}

  Tensor sample(std::size_t class_id, std::uint64_t counter) const
  {
    RngStream rng = RngStream::derive(spec_.seed, counter);
    return synth_sample(spec_, class_id, rng);
  }

  /// Next labelled batch: image tensor [N, side, side, 1] and labels.
  std::pair<Tensor, std::vector<std::size_t>> next_batch(std::size_t batch)
  {
    std::size_t const        S = spec_.side;
    std::vector<double>      data;
    std::vector<std::size_t> labels(batch);
    data.reserve(batch * S * S);
    for (std::size_t b = 0; b < batch; ++b)
    {
      RngStream pick = RngStream::derive(spec_.seed ^ 0xc1a55ULL, counter_);
      labels[b]      = static_cast<std::size_t>(pick.uniform_int(spec_.num_classes));
      Tensor img     = sample(labels[b], counter_);
      ++counter_;
      data.insert(data.end(), img.data().begin(), img.data().end());
    }
    return {Tensor({batch, S, S, 1}, std::move(data)), std::move(labels)};
  }

  std::uint64_t counter() const noexcept
  {
    return counter_;
  }
  SynthSpec const &spec() const noexcept
  {
    return spec_;
  }

private:
  SynthSpec     spec_;
  std::uint64_t counter_ = 0;
};

}  // namespace attnorm::gan
