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

// Gradient checks for the layers: AN (all parameters and the input),
// self-attention, and the orthogonal penalty.

#include "attnorm/attentive_norm.hpp"
#include "attnorm/gradcheck.hpp"
#include "attnorm/rng.hpp"
#include "attnorm/self_attention.hpp"

#include <string>
#include <vector>

namespace attnorm {

namespace detail {

inline Tensor random_tensor(RngStream &rng, Shape dims, double lo = -1.0, double hi = 1.0)
{
  std::vector<double> v(shape_numel(dims));
  for (auto &e : v)
  {
    e = rng.uniform(lo, hi);
  }
  return Tensor(std::move(dims), std::move(v));
}

/// Prefix every entry name so reports from several layers stay readable.
inline void append_report(GradCheckReport &into, GradCheckReport const &from, std::string const &tag)
{
  for (auto e : from.entries)
  {
    e.name = tag + e.name;
    into.entries.push_back(std::move(e));
  }
}

}  // namespace detail

struct GradCheckOptions
{
  double   h         = 1e-4;
  double   tol       = 1e-4;
  StatMode stat_mode = StatMode::instance;
  MeanMode mean_mode = MeanMode::weighted;
};

/**
 * AN on a 2x5x4x6 input with n = 3 in train mode. Parameters move off
 * their initial values (rho = 0 would zero most gradients) and the loss is
 * a fixed random weighting of the output. Sampling uses one stream for
 * every evaluation.
 */
inline GradCheckReport grad_check_an(std::uint64_t seed, GradCheckOptions const &opt = {})
{
  RngStream rng = RngStream::derive(seed, 100);
  ANConfig  cfg;
  cfg.channels  = 6;
  cfg.n         = 3;
  cfg.stat_mode = opt.stat_mode;
  cfg.mean_mode = opt.mean_mode;
  ANState state = ANState::init(cfg, seed);
  state.t.value     = detail::random_tensor(rng, {3}, 0.2, 0.8);
  state.rho.value   = detail::random_tensor(rng, {1}, 0.5, 1.5);
  state.alpha.value = detail::random_tensor(rng, {3, 6}, -0.5, 0.5);
  state.beta.value  = detail::random_tensor(rng, {3, 6}, 0.5, 1.5);

  Param        x("an.x", detail::random_tensor(rng, {2, 5, 4, 6}));
  Tensor const weight = detail::random_tensor(rng, {2, 5, 4, 6});

  LossBuilder f = [&](Tape &tape) {
    Var out = an_forward(tape.param(x), state, 0).out;
    return ag::sum(ag::mul(out, tape.constant(weight)));
  };
  std::vector<Param *> params = state.params();
  params.push_back(&x);
  return grad_check(f, params, opt.h, opt.tol);
}

/// Self-attention on 1x3x3x4 with a nonzero gate.
inline GradCheckReport grad_check_sa(std::uint64_t seed, GradCheckOptions const &opt = {})
{
  RngStream rng   = RngStream::derive(seed, 101);
  SAState   state = SAState::init(4, seed);
  state.gamma.value = detail::random_tensor(rng, {1}, 0.5, 1.5);
  Param        x("sa.x", detail::random_tensor(rng, {1, 3, 3, 4}));
  Tensor const weight = detail::random_tensor(rng, {1, 3, 3, 4});
  LossBuilder  f      = [&](Tape &tape) {
    Var out = sa_forward(tape.param(x), state).out;
    return ag::sum(ag::mul(out, tape.constant(weight)));
  };
  std::vector<Param *> params = state.params();
  params.push_back(&x);
  return grad_check(f, params, opt.h, opt.tol);
}

/// Orthogonal penalty on a random 4x6 filter bank.
inline GradCheckReport grad_check_orthogonal(std::uint64_t seed, GradCheckOptions const &opt = {})
{
  RngStream   rng = RngStream::derive(seed, 102);
  Param       w("ortho.w", detail::random_tensor(rng, {4, 6}));
  LossBuilder f = [&](Tape &tape) { return orthogonal_reg_loss(tape.param(w), 1.0); };
  Param      *p = &w;
  return grad_check(f, std::span<Param *const>(&p, 1), opt.h, opt.tol);
}

/// All three checks over `count` consecutive seeds starting at `seed`.
inline GradCheckReport grad_check_suite(std::uint64_t seed, std::size_t count,
                                        GradCheckOptions const &opt = {})
{
  GradCheckReport report;
  for (std::uint64_t s = seed; s < seed + count; ++s)
  {
    std::string const tag = "seed" + std::to_string(s) + ".";
    detail::append_report(report, grad_check_an(s, opt), tag);
    detail::append_report(report, grad_check_sa(s, opt), tag);
    detail::append_report(report, grad_check_orthogonal(s, opt), tag);
  }
  return report;
}

}  // namespace attnorm
