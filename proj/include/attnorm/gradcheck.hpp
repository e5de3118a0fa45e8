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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace attnorm {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
inline Tensor finite_diff_grad(std::function<double(Tensor const &)> const &f, Tensor const &x,
                               double h = 1e-4)
{
  if (!(h > 0.0))
  {
    throw DomainError("finite difference step must be positive");
  }
  Tensor grad = zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    double const orig = probe[i];
    probe[i]          = orig + h;
    double const up   = f(probe);
    probe[i]          = orig - h;
    double const down = f(probe);
    probe[i]          = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
    {
      throw DomainError("finite difference objective returned a non-finite value");
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double relative_error(double a, double b)
{
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

struct GradCheckEntry
{
  std::string name;
  double      max_rel_error = 0.0;
  bool        pass          = false;
};

struct GradCheckReport
{
  std::vector<GradCheckEntry> entries;

  bool all_pass() const
  {
    return std::all_of(entries.begin(), entries.end(), [](auto const &e) { return e.pass; });
  }

  /// One line per parameter: name, max relative error, PASS/FAIL.
  std::string render() const
  {
    std::string out;
    char        line[256];
    for (auto const &e : entries)
    {
      std::snprintf(line, sizeof(line), "%-24s %.3e %s\n", e.name.c_str(), e.max_rel_error,
                    e.pass ? "PASS" : "FAIL");
      out += line;
    }
    return out;
  }
};

/// Builds a scalar loss on the given tape. Must be deterministic.
using LossBuilder = std::function<Var(Tape &)>;

/**
 * Compare reverse-mode gradients with central differences for every
 * parameter. The builder binds parameters with tape.param(), so the same
 * closure serves both the analytic pass and the perturbed evaluations.
 */
inline GradCheckReport grad_check(LossBuilder const &f, std::span<Param *const> params,
                                  double h = 1e-4, double tol = 1e-4)
{
  for (auto *p : params)
  {
    p->zero_grad();
  }
  {
    Tape tape;
    Var  loss = f(tape);
    tape.backward(loss);
  }

  auto evaluate = [&]() {
    Tape tape;
    return f(tape).value().item();
  };

  GradCheckReport report;
  for (auto *p : params)
  {
    Tensor const analytic = p->grad;
    Tensor const saved    = p->value;
    Tensor const numeric  = finite_diff_grad(
        [&](Tensor const &probe) {
          p->value = probe;
          return evaluate();
        },
        saved, h);
    p->value = saved;

    GradCheckEntry entry{p->name, 0.0, true};
    for (std::size_t i = 0; i < analytic.size(); ++i)
    {
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric[i]));
    }
    entry.pass = entry.max_rel_error <= tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace attnorm
