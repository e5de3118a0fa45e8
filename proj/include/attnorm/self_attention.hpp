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

#include "attnorm/autograd.hpp"
#include "attnorm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace attnorm {

/// Self-attention block: every position attends over all H*W positions.
struct SAState
{
  std::size_t channels = 0;
  std::size_t reduced  = 0;
  Param       w_k;    // [c~, c]
  Param       w_q;    // [c~, c]
  Param       w_v;    // [c~, c]
  Param       w_o;    // [c, c~]
  Param       gamma;  // [1], starts at 0

  static SAState init(std::size_t channels, std::uint64_t seed, std::size_t reduced = 0,
                      std::string const &prefix = "sa.")
  {
    if (channels == 0)
    {
      throw DomainError("self-attention needs at least one channel");
    }
    SAState s;
    s.channels = channels;
    s.reduced  = reduced != 0 ? reduced : std::max<std::size_t>(channels / 8, 1);
    RngStream rng = RngStream::derive(seed, 0);
    auto      normal = [&](std::size_t rows, std::size_t cols) {
      double const        sd = std::sqrt(2.0 / static_cast<double>(cols));
      std::vector<double> v(rows * cols);
      for (auto &e : v)
      {
        e = rng.normal(0.0, sd);
      }
      return Tensor({rows, cols}, std::move(v));
    };
    s.w_k   = Param(prefix + "w_k", normal(s.reduced, channels));
    s.w_q   = Param(prefix + "w_q", normal(s.reduced, channels));
    s.w_v   = Param(prefix + "w_v", normal(s.reduced, channels));
    s.w_o   = Param(prefix + "w_o", normal(channels, s.reduced));
    s.gamma = Param(prefix + "gamma", Tensor({1}, 0.0));
    return s;
  }

  std::vector<Param *> params()
  {
    return {&w_k, &w_q, &w_v, &w_o, &gamma};
  }
};

struct SAForward
{
  Var out;
  Var attention;  // [N, HW, HW], rows are softmax over keys
};

/// out = gamma * W_o (softmax(q k^T) v) + x, no score scaling.
inline SAForward sa_forward(Var x, SAState &state)
{
  Tape        &tape = *x.tape;
  Shape const &d    = x.dims();
  if (d.size() != 4 || d[3] != state.channels)
  {
    throw ShapeError("sa_forward: input " + shape_str(d) + " does not have " +
                     std::to_string(state.channels) + " channels");
  }
  std::size_t const N = d[0], HW = d[1] * d[2], C = d[3], ct = state.reduced;
  Var               x2 = ag::reshape(x, {N * HW, C});
  auto project = [&](Param &w) {
    return ag::reshape(ag::matmul(x2, tape.param(w), false, true), {N, HW, ct});
  };
  Var q      = project(state.w_q);
  Var k      = project(state.w_k);
  Var v      = project(state.w_v);
  Var attn   = ag::softmax_last(ag::bmm(q, k, false, true), 1.0);
  Var ctx    = ag::reshape(ag::bmm(attn, v), {N * HW, ct});
  Var o      = ag::matmul(ctx, tape.param(state.w_o), false, true);
  Var out    = ag::add(ag::mul(tape.param(state.gamma), o), x2);
  return {ag::reshape(out, d), attn};
}

inline Tensor sa_forward(Tensor const &x, SAState &state)
{
  Tape tape;
  return sa_forward(tape.constant(x), state).out.value();
}

}  // namespace attnorm
