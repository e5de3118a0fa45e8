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

#include "attnorm/attentive_norm.hpp"
#include "attnorm/kernels.hpp"
#include "attnorm/rng.hpp"
#include "attnorm/self_attention.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace attnorm::bench {

enum class Module
{
  an,
  self_attention
};

inline std::string module_name(Module m)
{
  return m == Module::an ? "an" : "self-attention";
}

struct BenchShape
{
  std::size_t batch    = 1;
  std::size_t height   = 32;
  std::size_t width    = 32;
  std::size_t channels = 32;
  std::size_t n        = 16;
  bool        train    = false;  // count the sampling branch too

  std::size_t pixels() const
  {
    return height * width;
  }
  std::size_t reduced() const
  {
    return std::max<std::size_t>(channels / 8, 1);
  }
};

struct FlopCount
{
  std::uint64_t total             = 0;
  std::uint64_t attention_entries = 0;  // size of the H*W x H*W matrix, SA only
};

/**
 * Analytic arithmetic-operation count of one forward pass; a multiply-add
 * counts as one operation, as do exp, div, max and sqrt.
 *
 * AN (P = N H W): projection P n C, layout softmax 3 P n, moments
 * 2 P n C + P C + P n, statistics 6 N n C, normalization 2 P n C + 3 P C.
 * Train mode adds the k/q projections 2 P c~ C, pooling 4 P' c~, the
 * activation map P n c~ and the t-blend 2 P n.
 *
 * SA: projections 3 P c~ C, scores N (HW)^2 c~, softmax 3 N (HW)^2,
 * weighting N (HW)^2 c~, output P c~ C + 2 P C.
 */
inline FlopCount count_flops(Module module, BenchShape const &s)
{
  using u64         = std::uint64_t;
  u64 const N       = s.batch;
  u64 const HW      = s.pixels();
  u64 const P       = N * HW;
  u64 const C       = s.channels;
  u64 const n       = s.n;
  u64 const ct      = s.reduced();
  FlopCount f;
  if (module == Module::an)
  {
    f.total = P * n * C + 3 * P * n + 2 * P * n * C + P * C + P * n + 6 * N * n * C +
              2 * P * n * C + 3 * P * C;
    if (s.train)
    {
      u64 const pooled = N * ((s.height + 1) / 2) * ((s.width + 1) / 2);
      f.total += 2 * P * ct * C + 4 * pooled * ct + N * n * ct + P * n * ct + 2 * P * n;
    }
  }
  else
  {
    f.attention_entries = HW * HW;
    f.total = 3 * P * ct * C + N * HW * HW * ct + 3 * N * HW * HW + N * HW * HW * ct + P * ct * C +
              2 * P * C;
  }
  return f;
}

struct BenchRecord
{
  Module                     module = Module::an;
  BenchShape                 shape;
  std::size_t                reps    = 0;
  std::size_t                warmups = 0;
  std::vector<std::int64_t>  times_ns;
  std::size_t                threads    = 1;
  bool                       measurable = true;
  std::uint64_t              flops      = 0;

  double median_ns() const;
  double mad_ns() const;
};

inline double median(std::vector<double> v)
{
  if (v.empty())
  {
    throw DomainError("median of an empty sample");
  }
  std::sort(v.begin(), v.end());
  std::size_t const m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline double BenchRecord::median_ns() const
{
  return median(std::vector<double>(times_ns.begin(), times_ns.end()));
}

inline double BenchRecord::mad_ns() const
{
  double const        med = median_ns();
  std::vector<double> dev;
  dev.reserve(times_ns.size());
  for (auto t : times_ns)
  {
    dev.push_back(std::abs(static_cast<double>(t) - med));
  }
  return median(std::move(dev));
}

/// Threads in this process (Linux /proc), 1 if unavailable.
inline std::size_t current_thread_count()
{
  std::ifstream in("/proc/self/status");
  std::string   line;
  while (std::getline(in, line))
  {
    if (line.rfind("Threads:", 0) == 0)
    {
      return static_cast<std::size_t>(std::stoul(line.substr(8)));
    }
  }
  return 1;
}

/**
 * Time eval-mode single-precision forwards. Every repetition (and warmup)
 * gets a fresh input drawn from RngStream::derive(seed, index); only the
 * forward call is inside the timed region.
 */
inline BenchRecord time_forward(Module module, BenchShape const &shape, std::size_t reps,
                                std::size_t warmups, std::uint64_t seed)
{
  if (reps < 10 || warmups < 3)
  {
    throw DomainError("benchmark needs at least 10 repetitions after 3 warmups");
  }
  BenchRecord rec;
  rec.module  = module;
  rec.shape   = shape;
  rec.reps    = reps;
  rec.warmups = warmups;
  rec.flops   = count_flops(module, shape).total;
  rec.threads = current_thread_count();

  try
  {
    kernels::ANWeights<float> an_w;
    kernels::SAWeights<float> sa_w;
    if (module == Module::an)
    {
      ANConfig cfg;
      cfg.channels   = shape.channels;
      cfg.n          = shape.n;
      cfg.train_mode = false;
      auto state     = ANState::init(cfg, seed);
      state.rho.value[0] = 1.0;  // exercise the normalization arithmetic
      an_w = kernels::ANWeights<float>::from_state(state);
    }
    else
    {
      auto state           = SAState::init(shape.channels, seed);
      state.gamma.value[0] = 1.0;
      sa_w                 = kernels::SAWeights<float>::from_state(state);
    }

    Shape const dims{shape.batch, shape.height, shape.width, shape.channels};
    auto        make_input = [&](std::uint64_t index) {
      RngStream          rng = RngStream::derive(seed ^ 0x5a5a5a5aULL, index);
      std::vector<float> v(shape_numel(dims));
      for (auto &e : v)
      {
        e = static_cast<float>(rng.uniform(-1.0, 1.0));
      }
      return TensorF::unchecked(dims, std::move(v));
    };

    volatile float sink = 0.0f;
    for (std::size_t i = 0; i < warmups + reps; ++i)
    {
      TensorF const input = make_input(i);
      auto const    t0    = std::chrono::steady_clock::now();
      TensorF const out   = module == Module::an ? kernels::an_infer(input, an_w)
                                                 : kernels::sa_infer(input, sa_w);
      auto const    t1    = std::chrono::steady_clock::now();
      sink                = sink + out[0];
      if (i >= warmups)
      {
        auto const ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
        rec.times_ns.push_back(std::max<std::int64_t>(ns, 1));
      }
    }
  }
  catch (std::bad_alloc const &)
  {
    rec.measurable = false;
    rec.times_ns.clear();
  }
  return rec;
}

/// Least-squares slope of log(time) against log(pixels).
inline double fit_scaling_exponent(std::span<double const> pixels, std::span<double const> times)
{
  if (pixels.size() != times.size())
  {
    throw ShapeError("fit_scaling_exponent: size mismatch");
  }
  if (pixels.size() < 3)
  {
    throw DomainError("fit_scaling_exponent needs at least 3 points");
  }
  double const k = static_cast<double>(pixels.size());
  double       sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < pixels.size(); ++i)
  {
    if (!(pixels[i] > 0.0) || !(times[i] > 0.0))
    {
      throw DomainError("fit_scaling_exponent needs positive values");
    }
    sx += std::log(pixels[i]);
    sy += std::log(times[i]);
  }
  double const mx = sx / k, my = sy / k;
  double       sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < pixels.size(); ++i)
  {
    double const dx = std::log(pixels[i]) - mx;
    sxy += dx * (std::log(times[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0)
  {
    throw DomainError("fit_scaling_exponent needs distinct sizes");
  }
  return sxy / sxx;
}

/// module,side,channels,n,reps,median_ns,mad_ns,flops; '-' marks unmeasurable timings.
inline std::string render_csv(std::span<BenchRecord const> records)
{
  std::ostringstream os;
  os << "module,side,channels,n,reps,median_ns,mad_ns,flops\n";
  for (auto const &r : records)
  {
    os << module_name(r.module) << ',' << r.shape.height << ',' << r.shape.channels << ','
       << r.shape.n << ',' << r.reps << ',';
    if (r.measurable)
    {
      os << static_cast<std::int64_t>(r.median_ns()) << ',' << static_cast<std::int64_t>(r.mad_ns());
    }
    else
    {
      os << "-,-";
    }
    os << ',' << r.flops << '\n';
  }
  return os.str();
}

}  // namespace attnorm::bench
