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

// Tape-free, eval-mode forward kernels. These are what the benchmark times;
// they run in float or double and never allocate O((HW)^2) memory.

#include "attnorm/attentive_norm.hpp"
#include "attnorm/self_attention.hpp"
#include "attnorm/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <type_traits>
#include <vector>

namespace attnorm::kernels {

/// exp for x <= 0 in float: Cody-Waite reduction plus a degree-6 polynomial,
/// written so loops over it vectorize. Relative error ~2e-7.
inline float exp_nonpositive(float x) noexcept
{
  // Clamp at -87 in the bit domain: for x <= 0 a larger pattern is more
  // negative. A float compare here would keep the loop from vectorizing.
  x = std::bit_cast<float>(std::min(std::bit_cast<std::uint32_t>(x), std::bit_cast<std::uint32_t>(-87.0f)));
  constexpr float log2e   = 1.44269504088896341f;
  constexpr float ln2_hi  = 0.693145751953125f;
  constexpr float ln2_lo  = 1.428606765330187045e-06f;
  constexpr float shifter = 12582912.0f;  // 1.5 * 2^23
  float const     t       = x * log2e + shifter;
  float const     k       = t - shifter;
  float const     r       = (x - k * ln2_hi) - k * ln2_lo;
  float           p       = 1.0f / 720.0f;
  p                       = p * r + 1.0f / 120.0f;
  p                       = p * r + 1.0f / 24.0f;
  p                       = p * r + 1.0f / 6.0f;
  p                       = p * r + 0.5f;
  p                       = p * r + 1.0f;
  p                       = p * r + 1.0f;
  auto const ki           = static_cast<std::int32_t>(k);
  float const scale       = std::bit_cast<float>(static_cast<std::uint32_t>((ki + 127) << 23));
  return p * scale;
}

template <typename T>
inline T exp_nonpositive_t(T x) noexcept
{
  if constexpr (std::is_same_v<T, float>)
  {
    return exp_nonpositive(x);
  }
  else
  {
    return std::exp(x);
  }
}

template <typename T>
struct ANWeights
{
  std::size_t    channels = 0;
  std::size_t    n        = 0;
  T              tau{};
  T              eps{};
  StatMode       stat_mode = StatMode::instance;
  MeanMode       mean_mode = MeanMode::weighted;
  std::vector<T> w_f;    // [n, c]
  std::vector<T> alpha;  // [n, c]
  std::vector<T> beta;   // [n, c]
  T              rho{};

  static ANWeights from_state(ANState const &s)
  {
    auto cast = [](Tensor const &t) {
      return std::vector<T>(t.data().begin(), t.data().end());
    };
    ANWeights w;
    w.channels  = s.config.channels;
    w.n         = s.config.n;
    w.tau       = static_cast<T>(s.config.tau);
    w.eps       = static_cast<T>(s.config.eps);
    w.stat_mode = s.config.stat_mode;
    w.mean_mode = s.config.mean_mode;
    w.w_f       = cast(s.w_f.value);
    w.alpha     = cast(s.alpha.value);
    w.beta      = cast(s.beta.value);
    w.rho       = static_cast<T>(s.rho.value[0]);
    return w;
  }
};

/**
 * Eval-mode attentive normalization (sampling branch off). Same formulas
 * as the tape path: layout softmax, moment statistics, then
 * out = x + rho * (x * (S G) + S (alpha - mu G)).
 */
template <typename T>
BasicTensor<T> an_infer(BasicTensor<T> const &x, ANWeights<T> const &w)
{
  if (x.rank() != 4 || x.dim(3) != w.channels)
  {
    throw ShapeError("an_infer: input " + shape_str(x.dims()) + " does not match weights");
  }
  std::size_t const N = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3), n = w.n;
  bool const        batch    = w.stat_mode == StatMode::batchwise;
  bool const        weighted = w.mean_mode == MeanMode::weighted;
  std::size_t const groups   = batch ? 1 : N;
  auto const        xs       = x.data();

  std::vector<T> layout(N * HW * n);
  std::vector<T> num(groups * n * C, T{0});
  std::vector<T> sq(groups * n * C, T{0});
  std::vector<T> mass(groups * n, T{0});
  std::vector<T> peak(groups * n, T{0});
  std::vector<T> logits(n);

  for (std::size_t b = 0; b < N; ++b)
  {
    std::size_t const g = batch ? 0 : b;
    for (std::size_t p = 0; p < HW; ++p)
    {
      T const *px = xs.data() + (b * HW + p) * C;
      T       *ps = layout.data() + (b * HW + p) * n;
      T        m  = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < n; ++i)
      {
        T const *wf  = w.w_f.data() + i * C;
        T        acc = T{0};
        for (std::size_t c = 0; c < C; ++c)
        {
          acc += px[c] * wf[c];
        }
        logits[i] = w.tau * acc;
        m         = std::max(m, logits[i]);
      }
      T denom = T{0};
      for (std::size_t i = 0; i < n; ++i)
      {
        ps[i] = std::exp(logits[i] - m);
        denom += ps[i];
      }
      for (std::size_t i = 0; i < n; ++i)
      {
        ps[i] /= denom;
        T const s = ps[i];
        mass[g * n + i] += s;
        peak[g * n + i] = std::max(peak[g * n + i], s);
        T const  ws = weighted ? s : s * s;
        T       *pn = num.data() + (g * n + i) * C;
        T       *pq = sq.data() + (g * n + i) * C;
        for (std::size_t c = 0; c < C; ++c)
        {
          pn[c] += s * px[c];
          pq[c] += ws * (px[c] * px[c]);
        }
      }
    }
  }

  // per (group, region, channel) gain and shift
  std::vector<T> gain(groups * n * C);
  std::vector<T> shift(groups * n * C);
  T const        count = static_cast<T>(batch ? N * HW : HW);
  for (std::size_t g = 0; g < groups; ++g)
  {
    for (std::size_t i = 0; i < n; ++i)
    {
      bool const valid = peak[g * n + i] >= static_cast<T>(kMassEps);
      T const    mr    = mass[g * n + i];
      T const    m     = std::max(mr, static_cast<T>(kMassEps));
      for (std::size_t c = 0; c < C; ++c)
      {
        std::size_t const k = (g * n + i) * C + c;
        T                 mu;
        T                 var;
        if (weighted)
        {
          mu  = num[k] / m;
          var = sq[k] / m - mu * mu * (T{2} - mr / m);
        }
        else
        {
          mu  = num[k] / count;
          var = sq[k] / count - mu * mu;
        }
        T sigma = std::sqrt(std::max(var, T{0}));
        if (!valid)
        {
          mu    = T{0};
          sigma = T{0};
        }
        gain[k]  = w.beta[i * C + c] / (sigma + w.eps);
        shift[k] = w.alpha[i * C + c] - mu * gain[k];
      }
    }
  }

  std::vector<T> out(x.size());
  std::vector<T> scale_row(C);
  std::vector<T> shift_row(C);
  for (std::size_t b = 0; b < N; ++b)
  {
    std::size_t const g = batch ? 0 : b;
    for (std::size_t p = 0; p < HW; ++p)
    {
      T const *px = xs.data() + (b * HW + p) * C;
      T const *ps = layout.data() + (b * HW + p) * n;
      std::fill(scale_row.begin(), scale_row.end(), T{0});
      std::fill(shift_row.begin(), shift_row.end(), T{0});
      for (std::size_t i = 0; i < n; ++i)
      {
        T const  s  = ps[i];
        T const *pg = gain.data() + (g * n + i) * C;
        T const *pb = shift.data() + (g * n + i) * C;
        for (std::size_t c = 0; c < C; ++c)
        {
          scale_row[c] += s * pg[c];
          shift_row[c] += s * pb[c];
        }
      }
      T *po = out.data() + (b * HW + p) * C;
      for (std::size_t c = 0; c < C; ++c)
      {
        po[c] = w.rho * (px[c] * scale_row[c] + shift_row[c]) + px[c];
      }
    }
  }
  return BasicTensor<T>::unchecked(x.dims(), std::move(out));
}

template <typename T>
struct SAWeights
{
  std::size_t    channels = 0;
  std::size_t    reduced  = 0;
  std::vector<T> w_q;  // [c~, c]
  std::vector<T> w_k;  // [c~, c]
  std::vector<T> w_v;  // [c~, c]
  std::vector<T> w_o;  // [c, c~]
  T              gamma{};

  static SAWeights from_state(SAState const &s)
  {
    auto cast = [](Tensor const &t) {
      return std::vector<T>(t.data().begin(), t.data().end());
    };
    SAWeights w;
    w.channels = s.channels;
    w.reduced  = s.reduced;
    w.w_q      = cast(s.w_q.value);
    w.w_k      = cast(s.w_k.value);
    w.w_v      = cast(s.w_v.value);
    w.w_o      = cast(s.w_o.value);
    w.gamma    = static_cast<T>(s.gamma.value[0]);
    return w;
  }
};

/**
 * Self-attention forward that streams over keys: for each block of queries
 * one pass finds the row maxima, a second accumulates exp-weighted values.
 * Keys are visited in ascending order for every output, so the result does
 * not depend on the block size. Memory is O(HW * c~).
 */
template <typename T>
BasicTensor<T> sa_infer(BasicTensor<T> const &x, SAWeights<T> const &w)
{
  if (x.rank() != 4 || x.dim(3) != w.channels)
  {
    throw ShapeError("sa_infer: input " + shape_str(x.dims()) + " does not match weights");
  }
  constexpr std::size_t B = 64;  // queries per block, the vectorized axis
  std::size_t const     N = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3), ct = w.reduced;
  auto const            xs = x.data();

  std::vector<T> q(HW * ct), k(HW * ct), v(HW * ct);
  std::vector<T> out(x.size());
  std::vector<T> qblk(ct * B), acc(ct * B), ctx(ct);
  alignas(64) T  s[B];
  alignas(64) T  mx[B];
  alignas(64) T  den[B];

  for (std::size_t b = 0; b < N; ++b)
  {
    T const *xb = xs.data() + b * HW * C;
    for (std::size_t p = 0; p < HW; ++p)
    {
      for (std::size_t d = 0; d < ct; ++d)
      {
        T aq{0}, ak{0}, av{0};
        for (std::size_t c = 0; c < C; ++c)
        {
          T const xv = xb[p * C + c];
          aq += xv * w.w_q[d * C + c];
          ak += xv * w.w_k[d * C + c];
          av += xv * w.w_v[d * C + c];
        }
        q[p * ct + d] = aq;
        k[p * ct + d] = ak;
        v[p * ct + d] = av;
      }
    }

    T *__restrict qb = qblk.data();
    T *__restrict ab = acc.data();
    for (std::size_t q0 = 0; q0 < HW; q0 += B)
    {
      std::size_t const nb = std::min(B, HW - q0);
      std::fill(qblk.begin(), qblk.end(), T{0});
      for (std::size_t j = 0; j < nb; ++j)
      {
        for (std::size_t d = 0; d < ct; ++d)
        {
          qb[d * B + j] = q[(q0 + j) * ct + d];
        }
      }

      // score row of one key against the whole query block
      auto scores = [&](std::size_t key) {
        T const *kr = k.data() + key * ct;
        for (std::size_t j = 0; j < B; ++j)
        {
          s[j] = T{0};
        }
        for (std::size_t d = 0; d < ct; ++d)
        {
          T const        kd  = kr[d];
          T const *__restrict row = qb + d * B;
          for (std::size_t j = 0; j < B; ++j)
          {
            s[j] += kd * row[j];
          }
        }
      };

      for (std::size_t j = 0; j < B; ++j)
      {
        mx[j] = -std::numeric_limits<T>::infinity();
      }
      for (std::size_t key = 0; key < HW; ++key)
      {
        scores(key);
        for (std::size_t j = 0; j < B; ++j)
        {
          mx[j] = std::max(mx[j], s[j]);
        }
      }

      for (std::size_t j = 0; j < B; ++j)
      {
        den[j] = T{0};
      }
      std::fill(acc.begin(), acc.end(), T{0});
      for (std::size_t key = 0; key < HW; ++key)
      {
        scores(key);
        for (std::size_t j = 0; j < B; ++j)
        {
          s[j] = exp_nonpositive_t<T>(s[j] - mx[j]);
          den[j] += s[j];
        }
        T const *vr = v.data() + key * ct;
        for (std::size_t d = 0; d < ct; ++d)
        {
          T const        vd  = vr[d];
          T *__restrict  row = ab + d * B;
          for (std::size_t j = 0; j < B; ++j)
          {
            row[j] += s[j] * vd;
          }
        }
      }

      for (std::size_t j = 0; j < nb; ++j)
      {
        for (std::size_t d = 0; d < ct; ++d)
        {
          ctx[d] = ab[d * B + j] / den[j];
        }
        std::size_t const p = q0 + j;
        for (std::size_t c = 0; c < C; ++c)
        {
          T o{0};
          for (std::size_t d = 0; d < ct; ++d)
          {
            o += ctx[d] * w.w_o[c * ct + d];
          }
          out[(b * HW + p) * C + c] = w.gamma * o + xb[p * C + c];
        }
      }
    }
  }
  return BasicTensor<T>::unchecked(x.dims(), std::move(out));
}

}  // namespace attnorm::kernels
