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

// Attentive normalization: a soft semantic layout is predicted from the
// features (entity filters plus a self-sampling branch), every soft region
// is normalized as its own instance, and the result is blended back into
// the input through a zero-initialized gate.

#include "attnorm/autograd.hpp"
#include "attnorm/rng.hpp"
#include "attnorm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace attnorm {

enum class StatMode
{
  instance,   // per sample, region and channel
  batchwise,  // pooled across the batch axis
};

enum class MeanMode
{
  weighted,  // divide by the soft region mass
  literal,   // plain mean/std of x * S_i over every position
};

/// Region mass floor used in the weighted statistics.
inline constexpr double kMassEps = 1e-8;

struct ANConfig
{
  std::size_t channels         = 0;
  std::size_t n                = 16;
  double      tau              = 0.1;
  double      eps              = 1e-5;
  std::size_t reduced_channels = 0;  // 0 selects max(channels / 8, 1)
  StatMode    stat_mode        = StatMode::instance;
  MeanMode    mean_mode        = MeanMode::weighted;
  double      lambda_o         = 1e-4;
  bool        train_mode       = true;
  bool        self_sampling    = true;  // false freezes t at 0 (SSR off)

  std::size_t reduced() const
  {
    return reduced_channels != 0 ? reduced_channels : std::max<std::size_t>(channels / 8, 1);
  }

  void validate() const
  {
    if (channels == 0 || n == 0 || !(tau > 0.0) || !(eps > 0.0) || reduced() > channels)
    {
      throw DomainError("invalid attentive-norm configuration");
    }
  }
};

/// All learnable quantities of one layer plus its configuration.
struct ANState
{
  ANConfig      config;
  Param         w_f;    // [n, c] entity filters
  Param         w_k;    // [c~, c]
  Param         w_q;    // [c~, c]
  Param         t;      // [n]
  Param         rho;    // [1]
  Param         alpha;  // [n, c]
  Param         beta;   // [n, c]
  std::uint64_t rng_seed = 0;

  /// Projections ~ N(0, 2 / c); t = 0.1, rho = 0, alpha = 0, beta = 1.
  static ANState init(ANConfig const &cfg, std::uint64_t seed, std::string const &prefix = "an.")
  {
    cfg.validate();
    std::size_t const c  = cfg.channels;
    std::size_t const ct = cfg.reduced();
    RngStream         rng = RngStream::derive(seed, 0);
    double const      sd  = std::sqrt(2.0 / static_cast<double>(c));
    auto              normal = [&](std::size_t rows) {
      std::vector<double> v(rows * c);
      for (auto &e : v)
      {
        e = rng.normal(0.0, sd);
      }
      return Tensor({rows, c}, std::move(v));
    };
    ANState s;
    s.config   = cfg;
    s.w_f      = Param(prefix + "w_f", normal(cfg.n));
    s.w_k      = Param(prefix + "w_k", normal(ct));
    s.w_q      = Param(prefix + "w_q", normal(ct));
    s.t        = Param(prefix + "t", Tensor({cfg.n}, 0.1));
    s.rho      = Param(prefix + "rho", Tensor({1}, 0.0));
    s.alpha    = Param(prefix + "alpha", Tensor({cfg.n, c}, 0.0));
    s.beta     = Param(prefix + "beta", Tensor({cfg.n, c}, 1.0));
    s.rng_seed = seed;
    if (!cfg.self_sampling)
    {
      s.t.value = Tensor({cfg.n}, 0.0);
    }
    return s;
  }

  std::vector<Param *> params()
  {
    return {&w_f, &w_k, &w_q, &t, &rho, &alpha, &beta};
  }
};

/// Per-sample soft assignment S[N,H,W,n]; a probability simplex at every pixel.
class SemanticLayout
{
public:
  explicit SemanticLayout(Tensor s, double tol = 1e-6)
    : s_(std::move(s))
  {
    if (s_.rank() != 4)
    {
      throw ShapeError("semantic layout must be [N,H,W,n]");
    }
    std::size_t const n = s_.dims().back();
    for (std::size_t base = 0; base < s_.size(); base += n)
    {
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k)
      {
        double const v = s_[base + k];
        if (v < 0.0 || v > 1.0)
        {
          throw DomainError("layout entry outside [0, 1]");
        }
        total += v;
      }
      if (std::abs(total - 1.0) > tol)
      {
        throw DomainError("layout pixel does not sum to 1");
      }
    }
  }

  Tensor const &tensor() const noexcept
  {
    return s_;
  }
  std::size_t entities() const
  {
    return s_.dims().back();
  }

private:
  Tensor s_;
};

/// Positions drawn from the pooled key map, one list of n per sample.
using SamplingPlan = std::vector<std::vector<std::size_t>>;

/**
 * Uniform positions in [0, pooled) for each sample: a partial Fisher-Yates
 * shuffle (no repeats) when pooled >= n, otherwise n independent draws.
 */
inline SamplingPlan draw_sampling_plan(std::size_t batch, std::size_t pooled, std::size_t n,
                                       RngStream &rng)
{
  SamplingPlan plan(batch);
  for (auto &rows : plan)
  {
    rows.resize(n);
    if (pooled >= n)
    {
      std::vector<std::size_t> perm(pooled);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = 0; i < n; ++i)
      {
        std::size_t const j = i + static_cast<std::size_t>(rng.uniform_int(pooled - i));
        std::swap(perm[i], perm[j]);
        rows[i] = perm[i];
      }
    }
    else
    {
      for (auto &r : rows)
      {
        r = static_cast<std::size_t>(rng.uniform_int(pooled));
      }
    }
  }
  return plan;
}

//------------------------------------------------------------------------------
// Tape-level operations
//------------------------------------------------------------------------------

/// 1x1 convolution with the entity filters: f(X)[N,H,W,n].
inline Var entity_projection(Var x, Var w_f)
{
  Shape const &d = x.dims();
  if (d.size() != 4 || w_f.dims().size() != 2 || w_f.dims()[1] != d[3])
  {
    throw ShapeError("entity_projection: input " + shape_str(d) + " vs filters " +
                     shape_str(w_f.dims()));
  }
  Var x2 = ag::reshape(x, {d[0] * d[1] * d[2], d[3]});
  return ag::reshape(ag::matmul(x2, w_f, false, true), {d[0], d[1], d[2], w_f.dims()[0]});
}

/// lambda * ||W W^T - I||_F^2
inline Var orthogonal_reg_loss(Var w_f, double lambda_o)
{
  std::size_t const n = w_f.dims().at(0);
  Tensor            eye({n, n});
  for (std::size_t i = 0; i < n; ++i)
  {
    eye[i * n + i] = 1.0;
  }
  Var gram = ag::matmul(w_f, w_f, false, true);
  Var diff = ag::sub(gram, w_f.tape->constant(std::move(eye)));
  return ag::scale(ag::sum(ag::square(diff)), lambda_o);
}

/**
 * Activation status map F[N,H,W,n]: inner products between every query
 * pixel q(X)_p and the n key vectors picked from the max-pooled k(X).
 * The plan is data-independent, so gradients reach W_k and x only through
 * the picked values.
 */
inline Var activation_status(Var x, Var w_k, Var w_q, SamplingPlan const &plan)
{
  Shape const      &d  = x.dims();
  std::size_t const N = d[0], H = d[1], W = d[2], C = d[3];
  std::size_t const ct = w_k.dims().at(0);
  Var               x2 = ag::reshape(x, {N * H * W, C});
  Var               k  = ag::reshape(ag::matmul(x2, w_k, false, true), {N, H, W, ct});
  Var               pooled = ag::max_pool_2x2(k);
  std::size_t const positions = pooled.dims()[1] * pooled.dims()[2];
  Var               keys = ag::gather_rows(ag::reshape(pooled, {N, positions, ct}), plan);
  Var               q    = ag::reshape(ag::matmul(x2, w_q, false, true), {N, H * W, ct});
  std::size_t const n    = keys.dims()[1];
  return ag::reshape(ag::bmm(q, keys, false, true), {N, H, W, n});
}

inline std::size_t pooled_positions(Shape const &x)
{
  return ((x.at(1) + 1) / 2) * ((x.at(2) + 1) / 2);
}

/// S_raw = t * F + f(X), t broadcast over N, H, W.
inline Var raw_layout(Var f_map, Var fx, Var t)
{
  if (f_map.dims() != fx.dims() || t.dims().size() != 1 || t.dims()[0] != fx.dims().back())
  {
    throw ShapeError("raw_layout: incompatible F " + shape_str(f_map.dims()) + ", f(X) " +
                     shape_str(fx.dims()) + ", t " + shape_str(t.dims()));
  }
  return ag::add(ag::mul(t, f_map), fx);
}

inline Var soft_layout(Var s_raw, double tau)
{
  return ag::softmax_last(s_raw, tau);
}

struct RegionStatsVars
{
  Var mu;     // [N or 1, n, C]
  Var sigma;  // [N or 1, n, C]
};

/**
 * Per-region mean and population standard deviation.
 *
 * weighted: mu = sum_p S x / m, var = sum_p S (x - mu)^2 / m with
 *           m = max(sum_p S, kMassEps), evaluated through the moments
 *           sum S x and sum S x^2 so the cost stays O(N H W n C).
 * literal:  mean / std of x * S over every position.
 *
 * Regions whose layout never reaches kMassEps get mu = sigma = 0.
 */
inline RegionStatsVars regional_stats(Var x, Var s, StatMode stat_mode, MeanMode mean_mode)
{
  Tape             &tape = *x.tape;
  Shape const      &d    = x.dims();
  std::size_t const N = d.at(0), HW = d.at(1) * d.at(2), C = d.at(3);
  std::size_t const n = s.dims().back();
  if (s.dims().size() != 4 || s.dims()[0] != N || s.dims()[1] * s.dims()[2] != HW)
  {
    throw ShapeError("regional_stats: layout " + shape_str(s.dims()) + " vs input " + shape_str(d));
  }
  bool const batch = stat_mode == StatMode::batchwise;
  Var        x3    = ag::reshape(x, {N, HW, C});
  Var        s3    = ag::reshape(s, {N, HW, n});

  // layout support mask, constant
  std::size_t const groups = batch ? 1 : N;
  Tensor            valid({groups, n, 1});
  {
    Tensor const &sv = s.value();
    for (std::size_t b = 0; b < N; ++b)
    {
      for (std::size_t p = 0; p < HW; ++p)
      {
        for (std::size_t i = 0; i < n; ++i)
        {
          if (sv[(b * HW + p) * n + i] >= kMassEps)
          {
            valid[(batch ? 0 : b) * n + i] = 1.0;
          }
        }
      }
    }
  }

  auto pool = [&](Var v) { return batch ? ag::sum_axes(v, {0}) : v; };

  Var mu;
  Var var;
  if (mean_mode == MeanMode::weighted)
  {
    Var num  = pool(ag::bmm(s3, x3, true, false));
    Var sq   = pool(ag::bmm(s3, ag::square(x3), true, false));
    Var mass = pool(ag::reshape(ag::sum_axes(s3, {1}), {N, n, 1}));
    Var m    = ag::clamp_min(mass, kMassEps);
    mu       = ag::div(num, m);
    // sum S (x - mu)^2 / m = sum S x^2 / m - mu^2 (2 - mass / m)
    Var two_minus_r = ag::add_scalar(ag::neg(ag::div(mass, m)), 2.0);
    var             = ag::sub(ag::div(sq, m), ag::mul(ag::square(mu), two_minus_r));
  }
  else
  {
    double const count = static_cast<double>(batch ? N * HW : HW);
    Var          num   = pool(ag::bmm(s3, x3, true, false));
    Var          sq    = pool(ag::bmm(ag::square(s3), ag::square(x3), true, false));
    mu                 = ag::scale(num, 1.0 / count);
    var                = ag::sub(ag::scale(sq, 1.0 / count), ag::square(mu));
  }
  Var mask  = tape.constant(std::move(valid));
  Var sigma = ag::sqrt(ag::clamp_min(var, 0.0));
  return {ag::mul(mu, mask), ag::mul(sigma, mask)};
}

/**
 * X_bar = sum_i ((x - mu_i) / (sigma_i + eps) * beta_i + alpha_i) * S_i,
 * computed as x * (S G) + S (alpha - mu G) with G = beta / (sigma + eps).
 */
inline Var regional_normalize(Var x, Var s, Var mu, Var sigma, Var alpha, Var beta, double eps)
{
  Shape const      &d = x.dims();
  std::size_t const N = d.at(0), HW = d.at(1) * d.at(2), C = d.at(3);
  std::size_t const n = s.dims().back();
  if (mu.dims().size() != 3 || mu.dims()[1] != n || mu.dims()[2] != C || sigma.dims() != mu.dims() ||
      alpha.dims() != Shape{n, C} || beta.dims() != Shape{n, C})
  {
    throw ShapeError("regional_normalize: statistics or affine parameters do not match the layout");
  }
  if (eps < 0.0)
  {
    throw DomainError("regional_normalize: eps must be non-negative");
  }
  Var gain  = ag::div(beta, ag::add_scalar(sigma, eps));
  Var shift = ag::sub(alpha, ag::mul(mu, gain));
  Var s3    = ag::reshape(s, {N, HW, n});
  Var scale_map;
  Var shift_map;
  if (mu.dims()[0] == 1 && N > 1)
  {
    Var s2    = ag::reshape(s, {N * HW, n});
    scale_map = ag::reshape(ag::matmul(s2, ag::reshape(gain, {n, C})), {N, HW, C});
    shift_map = ag::reshape(ag::matmul(s2, ag::reshape(shift, {n, C})), {N, HW, C});
  }
  else
  {
    scale_map = ag::bmm(s3, gain);
    shift_map = ag::bmm(s3, shift);
  }
  Var x3 = ag::reshape(x, {N, HW, C});
  return ag::reshape(ag::add(ag::mul(x3, scale_map), shift_map), d);
}

struct ANForward
{
  Var out;
  Var layout;  // S[N,H,W,n]
  Var f_map;   // F, only bound when the sampling branch ran
};

/**
 * AN(X) = rho * X_bar + X. In train mode with self-sampling on, the
 * sampling plan comes from RngStream::derive(state.rng_seed, stream), so
 * repeating a stream id repeats the draw. Outside train mode t is treated
 * as 0 and the branch is skipped.
 */
inline ANForward an_forward(Var x, ANState &state, std::uint64_t stream)
{
  Tape           &tape = *x.tape;
  ANConfig const &cfg  = state.config;
  cfg.validate();
  Shape const &d = x.dims();
  if (d.size() != 4 || d[3] != cfg.channels)
  {
    throw ShapeError("an_forward: input " + shape_str(d) + " does not have " +
                     std::to_string(cfg.channels) + " channels");
  }
  Var w_f = tape.param(state.w_f);
  Var fx  = entity_projection(x, w_f);

  ANForward result{};
  Var       s_raw = fx;
  if (cfg.train_mode && cfg.self_sampling)
  {
    RngStream rng  = RngStream::derive(state.rng_seed, stream);
    auto      plan = draw_sampling_plan(d[0], pooled_positions(d), cfg.n, rng);
    result.f_map   = activation_status(x, tape.param(state.w_k), tape.param(state.w_q), plan);
    s_raw          = raw_layout(result.f_map, fx, tape.param(state.t));
  }
  Var s     = soft_layout(s_raw, cfg.tau);
  auto stats = regional_stats(x, s, cfg.stat_mode, cfg.mean_mode);
  Var xbar  = regional_normalize(x, s, stats.mu, stats.sigma, tape.param(state.alpha),
                                 tape.param(state.beta), cfg.eps);
  result.out    = ag::add(ag::mul(tape.param(state.rho), xbar), x);
  result.layout = s;
  return result;
}

//------------------------------------------------------------------------------
// Tensor-level conveniences (no gradient)
//------------------------------------------------------------------------------

inline Tensor entity_projection(Tensor const &x, Tensor const &w_f)
{
  Tape tape;
  return entity_projection(tape.constant(x), tape.constant(w_f)).value();
}

inline double orthogonal_reg_loss(Tensor const &w_f, double lambda_o)
{
  Tape tape;
  return orthogonal_reg_loss(tape.constant(w_f), lambda_o).value().item();
}

struct SelfSamplingResult
{
  Tensor       f_map;
  SamplingPlan plan;
};

inline SelfSamplingResult self_sampling(Tensor const &x, Tensor const &w_k, Tensor const &w_q,
                                        std::size_t n, RngStream &rng)
{
  auto plan = draw_sampling_plan(x.dim(0), pooled_positions(x.dims()), n, rng);
  Tape tape;
  auto f    = activation_status(tape.constant(x), tape.constant(w_k), tape.constant(w_q), plan);
  return {f.value(), std::move(plan)};
}

inline Tensor raw_layout(Tensor const &f_map, Tensor const &fx, Tensor const &t)
{
  Tape tape;
  return raw_layout(tape.constant(f_map), tape.constant(fx), tape.constant(t)).value();
}

inline SemanticLayout soft_layout(Tensor const &s_raw, double tau)
{
  return SemanticLayout(softmax_channels(s_raw, tau));
}

struct RegionStats
{
  Tensor mu;
  Tensor sigma;
};

inline RegionStats regional_stats(Tensor const &x, SemanticLayout const &s, StatMode stat_mode,
                                  MeanMode mean_mode)
{
  Tape tape;
  auto r = regional_stats(tape.constant(x), tape.constant(s.tensor()), stat_mode, mean_mode);
  return {r.mu.value(), r.sigma.value()};
}

inline Tensor regional_normalize(Tensor const &x, SemanticLayout const &s, Tensor const &mu,
                                 Tensor const &sigma, Tensor const &alpha, Tensor const &beta,
                                 double eps)
{
  Tape tape;
  return regional_normalize(tape.constant(x), tape.constant(s.tensor()), tape.constant(mu),
                            tape.constant(sigma), tape.constant(alpha), tape.constant(beta), eps)
      .value();
}

struct ANResult
{
  Tensor         out;
  SemanticLayout layout;
};

inline ANResult an_forward(Tensor const &x, ANState &state, std::uint64_t stream = 0)
{
  Tape tape;
  auto r = an_forward(tape.constant(x), state, stream);
  return {r.out.value(), SemanticLayout(r.layout.value())};
}

/**
 * Number of entities per sample whose total mass reaches
 * threshold * H * W / n.
 */
inline std::vector<std::size_t> effective_entity_count(SemanticLayout const &layout,
                                                       double threshold = 0.05)
{
  if (!(threshold > 0.0 && threshold < 1.0))
  {
    throw DomainError("effective_entity_count threshold must lie in (0, 1)");
  }
  Tensor const     &s  = layout.tensor();
  std::size_t const N  = s.dim(0);
  std::size_t const HW = s.dim(1) * s.dim(2);
  std::size_t const n  = s.dim(3);
  double const      bound = threshold * static_cast<double>(HW) / static_cast<double>(n);
  std::vector<std::size_t> counts(N, 0);
  for (std::size_t b = 0; b < N; ++b)
  {
    std::vector<double> mass(n, 0.0);
    for (std::size_t p = 0; p < HW; ++p)
    {
      for (std::size_t i = 0; i < n; ++i)
      {
        mass[i] += s[(b * HW + p) * n + i];
      }
    }
    counts[b] = static_cast<std::size_t>(std::count_if(mass.begin(), mass.end(), [bound](double m) {
      return m >= bound;
    }));
  }
  return counts;
}

}  // namespace attnorm
