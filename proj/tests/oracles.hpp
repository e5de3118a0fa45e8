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

// Straight-line reference evaluations used as test oracles. They work on
// flat std::vector<double> buffers in NHWC order and use nothing from the
// library except plain data, so a bug in the modular code cannot hide in
// both places.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

/// Reference splitmix64 step, written from the published recurrence.
inline std::uint64_t splitmix64(std::uint64_t &state)
{
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z               = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z               = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform integer in [0, range) by rejection below 2^64 mod range.
inline std::uint64_t uniform_below(std::uint64_t &state, std::uint64_t range)
{
  std::uint64_t const reject = (~range + 1) % range;
  for (;;)
  {
    std::uint64_t const v = splitmix64(state);
    if (v >= reject)
    {
      return v % range;
    }
  }
}

/**
 * Sampling positions for one call: the generator state starts at
 * finalize(seed + (stream + 1) * golden), each sample takes a partial
 * Fisher-Yates prefix of length n over the pooled cells (independent
 * draws when there are fewer cells than n).
 */
inline std::vector<std::vector<std::size_t>> sampling_plan(std::uint64_t seed, std::uint64_t stream,
                                                           std::size_t batch, std::size_t pooled,
                                                           std::size_t n)
{
  std::uint64_t z = seed + (stream + 1) * 0x9e3779b97f4a7c15ULL;
  z               = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z               = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  std::uint64_t state = z ^ (z >> 31);

  std::vector<std::vector<std::size_t>> plan(batch, std::vector<std::size_t>(n));
  for (auto &rows : plan)
  {
    if (pooled >= n)
    {
      std::vector<std::size_t> cells(pooled);
      for (std::size_t i = 0; i < pooled; ++i)
      {
        cells[i] = i;
      }
      for (std::size_t i = 0; i < n; ++i)
      {
        std::size_t const j = i + uniform_below(state, pooled - i);
        std::swap(cells[i], cells[j]);
        rows[i] = cells[i];
      }
    }
    else
    {
      for (auto &r : rows)
      {
        r = uniform_below(state, pooled);
      }
    }
  }
  return plan;
}

struct AnWeights
{
  std::size_t C = 0, n = 0, ct = 0;
  Vec         wf;     // n x C
  Vec         wk;     // ct x C
  Vec         wq;     // ct x C
  Vec         t;      // n
  double      rho = 0.0;
  Vec         alpha;  // n x C
  Vec         beta;   // n x C
  double      tau = 0.1;
  double      eps = 1e-5;
};

/**
 * One AN forward, instance statistics, mass-weighted mean. `picks[b][i]`
 * is the pooled position used as key i of sample b; empty means the
 * sampling branch is off (t treated as 0).
 */
inline Vec an_forward(Vec const &x, std::size_t N, std::size_t H, std::size_t W, AnWeights const &w,
                      std::vector<std::vector<std::size_t>> const &picks, Vec *layout_out = nullptr)
{
  std::size_t const C = w.C, n = w.n, ct = w.ct, HW = H * W;
  std::size_t const Wp = (W + 1) / 2;
  Vec               out(x.size());
  Vec               layout(N * HW * n);
  for (std::size_t b = 0; b < N; ++b)
  {
    double const *xb = x.data() + b * HW * C;
    // keys: k(X), 2x2 max pool with the last row/column repeated, then the picked cells
    Vec keys(n * ct, 0.0);
    if (!picks.empty())
    {
      for (std::size_t i = 0; i < n; ++i)
      {
        std::size_t const cell = picks[b][i];
        std::size_t const pi = cell / Wp, pj = cell % Wp;
        for (std::size_t r = 0; r < ct; ++r)
        {
          double best = -INFINITY;
          for (std::size_t di = 0; di < 2; ++di)
          {
            for (std::size_t dj = 0; dj < 2; ++dj)
            {
              std::size_t const y  = std::min(2 * pi + di, H - 1);
              std::size_t const xx = std::min(2 * pj + dj, W - 1);
              double            kv = 0.0;
              for (std::size_t c = 0; c < C; ++c)
              {
                kv += w.wk[r * C + c] * xb[(y * W + xx) * C + c];
              }
              best = std::max(best, kv);
            }
          }
          keys[i * ct + r] = best;
        }
      }
    }
    // layout
    for (std::size_t p = 0; p < HW; ++p)
    {
      Vec raw(n);
      for (std::size_t i = 0; i < n; ++i)
      {
        double fx = 0.0;
        for (std::size_t c = 0; c < C; ++c)
        {
          fx += w.wf[i * C + c] * xb[p * C + c];
        }
        double f = 0.0;
        if (!picks.empty())
        {
          for (std::size_t r = 0; r < ct; ++r)
          {
            double q = 0.0;
            for (std::size_t c = 0; c < C; ++c)
            {
              q += w.wq[r * C + c] * xb[p * C + c];
            }
            f += q * keys[i * ct + r];
          }
        }
        raw[i] = (picks.empty() ? 0.0 : w.t[i]) * f + fx;
      }
      double top = -INFINITY;
      for (double v : raw)
      {
        top = std::max(top, w.tau * v);
      }
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i)
      {
        raw[i] = std::exp(w.tau * raw[i] - top);
        z += raw[i];
      }
      for (std::size_t i = 0; i < n; ++i)
      {
        layout[(b * HW + p) * n + i] = raw[i] / z;
      }
    }
    // per-region statistics, two passes
    Vec mu(n * C, 0.0), sd(n * C, 0.0);
    for (std::size_t i = 0; i < n; ++i)
    {
      double mass = 0.0;
      bool   live = false;
      for (std::size_t p = 0; p < HW; ++p)
      {
        double const s = layout[(b * HW + p) * n + i];
        mass += s;
        live = live || s >= 1e-8;
      }
      if (!live)
      {
        continue;
      }
      double const m = std::max(mass, 1e-8);
      for (std::size_t c = 0; c < C; ++c)
      {
        double acc = 0.0;
        for (std::size_t p = 0; p < HW; ++p)
        {
          acc += layout[(b * HW + p) * n + i] * xb[p * C + c];
        }
        double const mean = acc / m;
        double       var  = 0.0;
        for (std::size_t p = 0; p < HW; ++p)
        {
          double const d = xb[p * C + c] - mean;
          var += layout[(b * HW + p) * n + i] * d * d;
        }
        mu[i * C + c] = mean;
        sd[i * C + c] = std::sqrt(var / m);
      }
    }
    // normalize, gate, residual
    for (std::size_t p = 0; p < HW; ++p)
    {
      for (std::size_t c = 0; c < C; ++c)
      {
        double xbar = 0.0;
        for (std::size_t i = 0; i < n; ++i)
        {
          double const z = (xb[p * C + c] - mu[i * C + c]) / (sd[i * C + c] + w.eps);
          xbar += (z * w.beta[i * C + c] + w.alpha[i * C + c]) * layout[(b * HW + p) * n + i];
        }
        out[(b * HW + p) * C + c] = w.rho * xbar + xb[p * C + c];
      }
    }
  }
  if (layout_out != nullptr)
  {
    *layout_out = layout;
  }
  return out;
}

/**
 * Plain instance normalization run separately inside each region of a
 * hard layout: region[b][p] names the region of pixel p in sample b.
 */
inline Vec region_instance_norm(Vec const &x, std::size_t N, std::size_t HW, std::size_t C,
                                std::vector<std::vector<std::size_t>> const &region, std::size_t n,
                                Vec const &alpha, Vec const &beta, double eps)
{
  Vec out(x.size(), 0.0);
  for (std::size_t b = 0; b < N; ++b)
  {
    for (std::size_t i = 0; i < n; ++i)
    {
      std::vector<std::size_t> members;
      for (std::size_t p = 0; p < HW; ++p)
      {
        if (region[b][p] == i)
        {
          members.push_back(p);
        }
      }
      if (members.empty())
      {
        continue;
      }
      for (std::size_t c = 0; c < C; ++c)
      {
        double sum = 0.0;
        for (auto p : members)
        {
          sum += x[(b * HW + p) * C + c];
        }
        double const mean = sum / static_cast<double>(members.size());
        double       ss   = 0.0;
        for (auto p : members)
        {
          double const d = x[(b * HW + p) * C + c] - mean;
          ss += d * d;
        }
        double const sd = std::sqrt(ss / static_cast<double>(members.size()));
        for (auto p : members)
        {
          double const z             = (x[(b * HW + p) * C + c] - mean) / (sd + eps);
          out[(b * HW + p) * C + c] = z * beta[i * C + c] + alpha[i * C + c];
        }
      }
    }
  }
  return out;
}

/// gamma * W_o softmax(q k^T) v + x, computed one query at a time.
inline Vec sa_forward(Vec const &x, std::size_t N, std::size_t HW, std::size_t C, std::size_t ct,
                      Vec const &wk, Vec const &wq, Vec const &wv, Vec const &wo, double gamma)
{
  Vec  out(x.size());
  auto proj = [&](Vec const &w, std::size_t b, std::size_t p, std::size_t r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c)
    {
      acc += w[r * C + c] * x[(b * HW + p) * C + c];
    }
    return acc;
  };
  for (std::size_t b = 0; b < N; ++b)
  {
    for (std::size_t p = 0; p < HW; ++p)
    {
      Vec score(HW);
      for (std::size_t s = 0; s < HW; ++s)
      {
        double dot = 0.0;
        for (std::size_t r = 0; r < ct; ++r)
        {
          dot += proj(wq, b, p, r) * proj(wk, b, s, r);
        }
        score[s] = dot;
      }
      double const top = *std::max_element(score.begin(), score.end());
      double       z   = 0.0;
      for (auto &v : score)
      {
        v = std::exp(v - top);
        z += v;
      }
      Vec ctx(ct, 0.0);
      for (std::size_t s = 0; s < HW; ++s)
      {
        for (std::size_t r = 0; r < ct; ++r)
        {
          ctx[r] += score[s] / z * proj(wv, b, s, r);
        }
      }
      for (std::size_t c = 0; c < C; ++c)
      {
        double o = 0.0;
        for (std::size_t r = 0; r < ct; ++r)
        {
          o += wo[c * ct + r] * ctx[r];
        }
        out[(b * HW + p) * C + c] = gamma * o + x[(b * HW + p) * C + c];
      }
    }
  }
  return out;
}

/// Entities per sample whose summed layout mass reaches threshold * HW / n.
inline std::vector<std::size_t> entity_count(Vec const &s, std::size_t N, std::size_t HW, std::size_t n,
                                             double threshold)
{
  std::vector<std::size_t> out(N, 0);
  for (std::size_t b = 0; b < N; ++b)
  {
    for (std::size_t i = 0; i < n; ++i)
    {
      double mass = 0.0;
      for (std::size_t p = 0; p < HW; ++p)
      {
        mass += s[(b * HW + p) * n + i];
      }
      if (mass >= threshold * static_cast<double>(HW) / static_cast<double>(n))
      {
        ++out[b];
      }
    }
  }
  return out;
}

/// Row-averaged column profile of a side x side single-channel image.
inline Vec column_profile(Vec const &img, std::size_t side)
{
  Vec profile(side, 0.0);
  for (std::size_t i = 0; i < side; ++i)
  {
    for (std::size_t j = 0; j < side; ++j)
    {
      profile[j] += img[i * side + j] / static_cast<double>(side);
    }
  }
  return profile;
}

/// Autocorrelation of the column profile at every lag below side.
inline Vec profile_autocorrelation(Vec const &img, std::size_t side)
{
  Vec const profile = column_profile(img, side);
  double    mean    = 0.0;
  for (double v : profile)
  {
    mean += v / static_cast<double>(side);
  }
  Vec r(side, 0.0);
  for (std::size_t lag = 0; lag < side; ++lag)
  {
    for (std::size_t j = 0; j + lag < side; ++j)
    {
      r[lag] += (profile[j] - mean) * (profile[j + lag] - mean);
    }
    r[lag] /= static_cast<double>(side - lag);
  }
  return r;
}

/// First positive local maximum of the autocorrelation after lag 1; 0 if none.
inline std::size_t first_autocorrelation_peak(Vec const &img, std::size_t side)
{
  Vec const r = profile_autocorrelation(img, side);
  for (std::size_t lag = 2; lag + 1 < side / 2; ++lag)
  {
    if (r[lag] > 0.0 && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1])
    {
      return lag;
    }
  }
  return 0;
}

}  // namespace oracle
