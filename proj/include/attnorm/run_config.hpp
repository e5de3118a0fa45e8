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

#include "attnorm/io.hpp"
#include "attnorm/tensor.hpp"

#include <charconv>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace attnorm {

/// Parameters of one CLI invocation; written as key=value lines next to its outputs.
struct RunConfig
{
  std::string              command;
  std::uint64_t            seed     = 0;
  std::size_t              n        = 16;
  double                   tau      = 0.1;
  std::vector<std::size_t> sides    = {32, 64, 128, 256};
  std::string              mode     = "train";     // train | eval
  std::string              stat     = "instance";  // instance | batch
  std::string              mean     = "weighted";  // weighted | literal
  std::string              out      = "out";
  std::size_t              channels = 32;
  std::size_t              steps    = 2000;
  std::size_t              batch    = 16;
  std::size_t              every    = 500;
  std::size_t              reps     = 10;
  std::size_t              warmups  = 3;
  std::size_t              seeds    = 5;
  bool                     ssr      = true;
  bool                     an       = true;
  bool                     d_an     = false;
  std::string              input;       // fixture tensor for layout-dump
  std::string              checkpoint;  // checkpoint stem for layout-dump

  bool operator==(RunConfig const &) const = default;

  /// Reject values outside their documented sets.
  void validate() const
  {
    if (mode != "train" && mode != "eval")
    {
      throw DomainError("mode must be train or eval, got '" + mode + "'");
    }
    if (stat != "instance" && stat != "batch")
    {
      throw DomainError("stat must be instance or batch, got '" + stat + "'");
    }
    if (mean != "weighted" && mean != "literal")
    {
      throw DomainError("mean must be weighted or literal, got '" + mean + "'");
    }
    if (n == 0 || !(tau > 0.0) || channels == 0 || batch == 0)
    {
      throw DomainError("n, tau, channels and batch must be positive");
    }
    if (sides.empty())
    {
      throw DomainError("sides must not be empty");
    }
    for (auto s : sides)
    {
      if (s == 0)
      {
        throw DomainError("sides must be positive");
      }
    }
  }

  std::string render() const;
  static RunConfig parse(std::string_view text);
};

namespace detail {

template <typename T>
T parse_number(std::string_view key, std::string_view v)
{
  T    out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size())
  {
    throw DomainError("run config: bad value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v)
{
  if (v == "true")
  {
    return true;
  }
  if (v == "false")
  {
    return false;
  }
  throw DomainError("run config: bad boolean '" + std::string(v) + "' for " + std::string(key));
}

inline std::vector<std::size_t> parse_sides(std::string_view v)
{
  std::vector<std::size_t> out;
  while (!v.empty())
  {
    auto const comma = v.find(',');
    out.push_back(parse_number<std::size_t>("sides", v.substr(0, comma)));
    v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
  }
  return out;
}

}  // namespace detail

inline std::string RunConfig::render() const
{
  std::string s;
  auto        line = [&](char const *k, std::string const &v) { s += std::string(k) + "=" + v + "\n"; };
  auto        flag = [](bool b) { return std::string(b ? "true" : "false"); };
  std::string joined;
  for (std::size_t i = 0; i < sides.size(); ++i)
  {
    joined += (i ? "," : "") + std::to_string(sides[i]);
  }
  line("command", command);
  line("seed", std::to_string(seed));
  line("n", std::to_string(n));
  line("tau", io::format_double(tau));
  line("sides", joined);
  line("mode", mode);
  line("stat", stat);
  line("mean", mean);
  line("out", out);
  line("channels", std::to_string(channels));
  line("steps", std::to_string(steps));
  line("batch", std::to_string(batch));
  line("every", std::to_string(every));
  line("reps", std::to_string(reps));
  line("warmups", std::to_string(warmups));
  line("seeds", std::to_string(seeds));
  line("ssr", flag(ssr));
  line("an", flag(an));
  line("d_an", flag(d_an));
  line("input", input);
  line("checkpoint", checkpoint);
  return s;
}

/// Inverse of render(); unknown keys and malformed lines are errors, missing keys keep defaults.
inline RunConfig RunConfig::parse(std::string_view text)
{
  using detail::parse_bool;
  using detail::parse_number;
  RunConfig          c;
  std::istringstream in{std::string(text)};
  std::string        raw;
  while (std::getline(in, raw))
  {
    if (raw.empty())
    {
      continue;
    }
    auto const eq = raw.find('=');
    if (eq == std::string::npos)
    {
      throw DomainError("run config: line without '=': " + raw);
    }
    std::string_view const k = std::string_view(raw).substr(0, eq);
    std::string_view const v = std::string_view(raw).substr(eq + 1);
    if (k == "command") c.command = v;
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "n") c.n = parse_number<std::size_t>(k, v);
    else if (k == "tau") c.tau = parse_number<double>(k, v);
    else if (k == "sides") c.sides = detail::parse_sides(v);
    else if (k == "mode") c.mode = v;
    else if (k == "stat") c.stat = v;
    else if (k == "mean") c.mean = v;
    else if (k == "out") c.out = v;
    else if (k == "channels") c.channels = parse_number<std::size_t>(k, v);
    else if (k == "steps") c.steps = parse_number<std::size_t>(k, v);
    else if (k == "batch") c.batch = parse_number<std::size_t>(k, v);
    else if (k == "every") c.every = parse_number<std::size_t>(k, v);
    else if (k == "reps") c.reps = parse_number<std::size_t>(k, v);
    else if (k == "warmups") c.warmups = parse_number<std::size_t>(k, v);
    else if (k == "seeds") c.seeds = parse_number<std::size_t>(k, v);
    else if (k == "ssr") c.ssr = parse_bool(k, v);
    else if (k == "an") c.an = parse_bool(k, v);
    else if (k == "d_an") c.d_an = parse_bool(k, v);
    else if (k == "input") c.input = v;
    else if (k == "checkpoint") c.checkpoint = v;
    else throw DomainError("run config: unknown key '" + std::string(k) + "'");
  }
  return c;
}

}  // namespace attnorm
