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
// Acceptance suite: one PASS/FAIL line per criterion. `--only N` runs one.

#include "attnorm/attnorm.hpp"
#include "attnorm/cli.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

using namespace attnorm;
using testutil::to_vec;
using testutil::uniform_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
  bool        pass = true;
  std::string detail;

  void fail(std::string const &why)
  {
    if (pass)
    {
      detail.clear();
    }
    else
    {
      detail += "; ";
    }
    pass = false;
    detail += why;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int digits = 4)
{
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double max_diff(oracle::Vec const &a, oracle::Vec const &b)
{
  if (a.size() != b.size())
  {
    return INFINITY;
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
  {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

ANConfig an_config(std::size_t channels, std::size_t n)
{
  ANConfig c;
  c.channels = channels;
  c.n        = n;
  return c;
}

int run_cli(std::vector<std::string> args, std::string *captured = nullptr)
{
  args.insert(args.begin(), "attnorm");
  std::vector<char const *> argv;
  for (auto const &a : args)
  {
    argv.push_back(a.c_str());
  }
  std::ostringstream out;
  int const code = cli::cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, std::cerr);
  if (captured != nullptr)
  {
    *captured = out.str();
  }
  return code;
}

std::vector<std::vector<std::string>> read_csv(fs::path const &path)
{
  std::istringstream                    in(io::read_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string                           line;
  while (std::getline(in, line))
  {
    if (line.empty())
    {
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream       ls(line);
    std::string              cell;
    while (std::getline(ls, cell, ','))
    {
      cells.push_back(cell);
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

void check_runtime(Outcome &o, Clock::time_point t0, double budget_s)
{
  double const s = seconds_since(t0);
  if (s >= budget_s)
  {
    o.fail("took " + num(s) + " s, budget " + num(budget_s) + " s");
  }
  else
  {
    o.detail += " [" + num(s, 3) + " s]";
  }
}

fs::path work_dir(std::string const &name)
{
  fs::path dir = fs::current_path() / "acceptance_out" / name;
  fs::remove_all(dir);
  return dir;
}

//------------------------------------------------------------------------------

Outcome identity_at_init()
{
  auto const t0 = Clock::now();
  Outcome    o;
  RngStream  rng(101);
  std::size_t bad = 0;
  for (int trial = 0; trial < 50; ++trial)
  {
    Shape const d   = testutil::random_nhwc(rng, 2, 16, 8);
    auto        cfg = an_config(d[3], 1 + rng.uniform_int(16));
    cfg.train_mode  = trial % 2 == 0;
    ANState      state = ANState::init(cfg, 1000 + trial);
    double const scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
    Tensor const x     = uniform_tensor(rng, d, -scale, scale);
    bad += bit_identical(an_forward(x, state, trial).out, x) ? 0 : 1;
  }
  o.detail = "50 inputs, " + std::to_string(bad) + " not bitwise identical";
  if (bad != 0)
  {
    o.fail(o.detail);
  }
  check_runtime(o, t0, 5.0);
  return o;
}

Outcome layout_simplex()
{
  auto const t0 = Clock::now();
  Outcome    o;
  RngStream  rng(102);
  double     worst_sum = 0.0;
  bool       in_range  = true;
  for (int trial = 0; trial < 100; ++trial)
  {
    Shape const d   = testutil::random_nhwc(rng, 2, 12, 8);
    auto        cfg = an_config(d[3], 1 + rng.uniform_int(16));
    cfg.tau         = rng.uniform(0.02, 2.0);
    cfg.train_mode  = trial % 2 == 0;
    ANState state   = ANState::init(cfg, trial);
    testutil::randomize_affine(state, rng);
    double const  scale = std::pow(10.0, rng.uniform(-2.0, 2.0));
    auto const    result = an_forward(uniform_tensor(rng, d, -scale, scale), state, trial);
    Tensor const &s      = result.layout.tensor();
    std::size_t const n = cfg.n;
    for (std::size_t base = 0; base < s.size(); base += n)
    {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i)
      {
        in_range = in_range && s[base + i] >= 0.0 && s[base + i] <= 1.0;
        sum += s[base + i];
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
  }
  o.detail = "100 inputs, max |sum - 1| = " + num(worst_sum);
  if (worst_sum > 1e-6)
  {
    o.fail(o.detail);
  }
  if (!in_range)
  {
    o.fail("layout entry outside [0,1]");
  }
  check_runtime(o, t0, 5.0);
  return o;
}

Outcome regional_oracle()
{
  auto const t0 = Clock::now();
  Outcome    o;
  RngStream  rng(103);
  double     worst = 0.0;
  for (int trial = 0; trial < 20; ++trial)
  {
    std::size_t const n     = 2 + static_cast<std::size_t>(trial % 3);
    Shape const       d     = testutil::random_nhwc(rng, 2, 8, 6);
    auto const        hard  = testutil::random_hard_layout(rng, d[0], d[1], d[2], n);
    Tensor const      x     = uniform_tensor(rng, d, -2.0, 2.0);
    Tensor const      alpha = uniform_tensor(rng, {n, d[3]}, -0.5, 0.5);
    Tensor const      beta  = uniform_tensor(rng, {n, d[3]}, 0.5, 1.5);
    SemanticLayout const s(hard.s);
    auto const r   = regional_stats(x, s, StatMode::instance, MeanMode::weighted);
    auto const out = regional_normalize(x, s, r.mu, r.sigma, alpha, beta, 1e-5);
    auto const ref = oracle::region_instance_norm(to_vec(x), d[0], d[1] * d[2], d[3], hard.region, n,
                                                  to_vec(alpha), to_vec(beta), 1e-5);
    worst = std::max(worst, max_diff(to_vec(out), ref));
  }
  o.detail = "20 hard layouts, max error " + num(worst);
  if (worst > 1e-6)
  {
    o.fail(o.detail);
  }

  Tensor const         x({1, 1, 4, 1}, {1, 3, 5, 7});
  SemanticLayout const s(Tensor({1, 1, 4, 2}, {1, 0, 1, 0, 0, 1, 0, 1}));
  auto const           r   = regional_stats(x, s, StatMode::instance, MeanMode::weighted);
  auto const           out = regional_normalize(x, s, r.mu, r.sigma, Tensor({2, 1}, 0.0), Tensor({2, 1}, 1.0), 0.0);
  if (out.values() != std::vector<double>{-1, 1, -1, 1})
  {
    o.fail("[1,3,5,7] fixture is not exactly [-1,1,-1,1]");
  }
  else
  {
    o.detail += "; [1,3,5,7] -> [-1,1,-1,1] exact";
  }
  check_runtime(o, t0, 5.0);
  return o;
}

Outcome full_pipeline_oracle()
{
  auto const t0 = Clock::now();
  Outcome    o;
  RngStream  rng = RngStream::derive(4, 50);
  ANState    state = ANState::init(an_config(2, 3), 4);
  testutil::randomize_affine(state, rng);
  Tensor const x      = uniform_tensor(rng, {1, 4, 4, 2}, -1.0, 1.0);
  auto const   result = an_forward(x, state, 4);
  auto const   plan   = oracle::sampling_plan(4, 4, 1, 4, 3);
  auto const   ref    = oracle::an_forward(to_vec(x), 1, 4, 4, testutil::oracle_weights(state), plan);
  double const train_err = max_diff(to_vec(result.out), ref);

  state.config.train_mode = false;
  double const eval_err = max_diff(to_vec(an_forward(x, state).out),
                                   oracle::an_forward(to_vec(x), 1, 4, 4, testutil::oracle_weights(state), {}));
  o.detail = "1x4x4x2 train error " + num(train_err) + ", eval error " + num(eval_err);
  if (!(train_err <= 1e-9 && eval_err <= 1e-9))
  {
    o.fail(o.detail);
  }
  check_runtime(o, t0, 1.0);
  return o;
}

Outcome gradient_checks()
{
  auto const t0     = Clock::now();
  Outcome    o;
  auto const report = grad_check_suite(0, 5);
  std::size_t failed = 0;
  double      worst  = 0.0;
  for (auto const &e : report.entries)
  {
    failed += e.pass ? 0 : 1;
    worst = std::max(worst, e.max_rel_error);
  }
  o.detail = std::to_string(report.entries.size()) + " entries over 5 seeds (AN 2x5x4x6 n=3, SA 1x3x3x4, "
             "orthogonal 4x6), worst relative error " + num(worst) + ", " + std::to_string(failed) + " failed";
  if (failed != 0 || report.entries.empty())
  {
    o.fail(o.detail + "\n" + report.render());
  }
  check_runtime(o, t0, 120.0);
  return o;
}

Outcome eval_determinism()
{
  auto const t0 = Clock::now();
  Outcome    o;
  RngStream  rng(106);
  Tensor const x   = uniform_tensor(rng, {2, 8, 8, 8}, -1.0, 1.0);
  auto         cfg = an_config(8, 4);
  cfg.train_mode   = false;
  ANState base     = ANState::init(cfg, 0);
  testutil::randomize_affine(base, rng);
  Tensor const ref = an_forward(x, base, 0).out;
  std::size_t  differ = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed)
  {
    ANState other  = base;
    other.rng_seed = seed * 7919;
    differ += bit_identical(an_forward(x, other, seed).out, ref) ? 0 : 1;
  }
  o.detail = "10 sampling seeds, " + std::to_string(differ) + " differ from seed 0";
  if (differ != 0 || bit_identical(ref, x))
  {
    o.fail(o.detail);
  }
  check_runtime(o, t0, 5.0);
  return o;
}

std::vector<double> bench_side_pixels()
{
  return {32.0 * 32, 64.0 * 64, 128.0 * 128, 256.0 * 256};
}

Outcome flop_slopes()
{
  auto const          t0 = Clock::now();
  Outcome             o;
  std::vector<double> an, sa;
  for (std::size_t side : {32u, 64u, 128u, 256u})
  {
    bench::BenchShape s;
    s.height = side;
    s.width  = side;
    an.push_back(static_cast<double>(bench::count_flops(bench::Module::an, s).total));
    sa.push_back(static_cast<double>(bench::count_flops(bench::Module::self_attention, s).total));
  }
  auto const   px       = bench_side_pixels();
  double const an_slope = bench::fit_scaling_exponent(px, an);
  double const sa_slope = bench::fit_scaling_exponent(px, sa);
  o.detail = "AN slope " + num(an_slope, 6) + ", SA slope " + num(sa_slope, 6);
  if (!(an_slope >= 0.95 && an_slope <= 1.05 && sa_slope >= 1.8 && sa_slope <= 2.0))
  {
    o.fail(o.detail);
  }
  check_runtime(o, t0, 1.0);
  return o;
}

Outcome wallclock_slopes()
{
  auto const     t0  = Clock::now();
  Outcome        o;
  fs::path const dir = work_dir("bench");
  std::string    log;
  int const code = run_cli({"bench", "--sides", "32,64,128,256", "--reps", "10", "--warmups", "3", "--seed", "0",
                            "--out", dir.string()},
                           &log);
  if (code != 0)
  {
    o.fail("bench exited " + std::to_string(code));
    return o;
  }
  std::map<std::string, std::map<std::size_t, double>> median;
  auto const rows = read_csv(dir / "bench.csv");
  for (std::size_t r = 1; r < rows.size(); ++r)
  {
    median[rows[r][0]][std::stoul(rows[r][1])] = std::stod(rows[r][5]);
  }
  auto slope = [&](std::string const &module) {
    std::vector<double> t;
    for (std::size_t side : {32u, 64u, 128u, 256u})
    {
      t.push_back(median[module].at(side));
    }
    return bench::fit_scaling_exponent(bench_side_pixels(), t);
  };
  if (rows.size() != 9 || median.size() != 2)
  {
    o.fail("bench.csv has " + std::to_string(rows.size() - 1) + " rows");
    return o;
  }
  std::string const an_name = bench::module_name(bench::Module::an);
  std::string const sa_name = bench::module_name(bench::Module::self_attention);
  double const an_slope = slope(an_name);
  double const sa_slope = slope(sa_name);
  double const an128    = median[an_name].at(128) / 1e6;
  double const sa128    = median[sa_name].at(128) / 1e6;
  o.detail = "AN slope " + num(an_slope) + ", SA slope " + num(sa_slope) + ", side 128: AN " + num(an128) +
             " ms vs SA " + num(sa128) + " ms, single thread";
  if (!(an_slope <= 1.3))
  {
    o.fail("AN wall-clock slope " + num(an_slope) + " > 1.3");
  }
  if (!(sa_slope >= 1.7))
  {
    o.fail("SA wall-clock slope " + num(sa_slope) + " < 1.7");
  }
  if (!(an128 < sa128))
  {
    o.fail("AN not faster than SA at side 128");
  }
  std::size_t timed = 0, single = 0;
  for (auto at = log.find("(threads "); at != std::string::npos; at = log.find("(threads ", at + 1))
  {
    ++timed;
    single += log.compare(at, 11, "(threads 1)") == 0 ? 1 : 0;
  }
  if (timed != 8 || single != timed)
  {
    o.fail("timed regions not all single threaded (" + std::to_string(single) + "/" + std::to_string(timed) + ")");
  }
  check_runtime(o, t0, 300.0);
  return o;
}

Outcome fit_sanity()
{
  auto const          t0 = Clock::now();
  Outcome             o;
  std::vector<double> px;
  for (double side : {128.0, 256.0, 512.0, 1024.0})
  {
    px.push_back(side * side);
  }
  std::vector<double> const ms{0.73, 2.24, 9.46, 37.68};
  double const              slope = bench::fit_scaling_exponent(px, ms);
  o.detail = "slope " + num(slope, 6);
  if (std::abs(slope - 0.95) > 0.02)
  {
    o.fail(o.detail);
  }
  check_runtime(o, t0, 1.0);
  return o;
}

/// Metrics rows without the trailing ms column, plus a finiteness check over every field.
std::string metrics_signature(fs::path const &csv, bool &all_finite, std::size_t &rows)
{
  auto const  table = read_csv(csv);
  std::string sig;
  rows       = table.empty() ? 0 : table.size() - 1;
  all_finite = true;
  for (std::size_t r = 1; r < table.size(); ++r)
  {
    for (std::size_t c = 0; c < table[r].size(); ++c)
    {
      all_finite = all_finite && std::isfinite(std::stod(table[r][c]));
      if (c + 1 < table[r].size())
      {
        sig += table[r][c] + ",";
      }
    }
    sig += "\n";
  }
  return sig;
}

Outcome gan_smoke()
{
  auto const     t0  = Clock::now();
  Outcome        o;
  fs::path const dir = work_dir("gan");
  std::string    log;
  auto const     run_start = Clock::now();
  int const code = run_cli({"demo-train", "--seed", "0", "--steps", "2000", "--batch", "16", "--out", dir.string()}, &log);
  double const first_s = seconds_since(run_start);
  if (code != 0)
  {
    o.fail("demo-train exited " + std::to_string(code));
    return o;
  }
  bool        finite = false;
  std::size_t rows   = 0;
  std::string const sig   = metrics_signature(dir / "metrics.csv", finite, rows);
  std::string const ckpt  = io::read_file(dir / "ckpt_2000.ant");
  std::string const grid  = io::read_file(dir / "samples_2000.pgm");
  auto const        saved = io::load_checkpoint(dir / "ckpt_2000");
  double const      rho   = saved.at("g.block2.an.rho")[0];

  auto const replay_start = Clock::now();
  int const  again        = run_cli({"replay", (dir / "run_config.txt").string()});
  double const second_s   = seconds_since(replay_start);
  bool         repro_finite = false;
  std::size_t  repro_rows   = 0;
  bool const   same = again == 0 && metrics_signature(dir / "metrics.csv", repro_finite, repro_rows) == sig &&
                    io::read_file(dir / "ckpt_2000.ant") == ckpt && io::read_file(dir / "samples_2000.pgm") == grid;

  o.detail = std::to_string(rows) + " steps, batch 16, 4 classes, seed 0; rho(2000) = " + num(rho, 6) +
             "; run " + num(first_s, 4) + " s, replay " + num(second_s, 4) + " s; replay " +
             (same ? "bit-identical" : "DIFFERS");
  if (rows != 2000)
  {
    o.fail("metrics.csv has " + std::to_string(rows) + " rows");
  }
  if (!finite)
  {
    o.fail("non-finite metric logged");
  }
  if (!(std::abs(rho) > 0.0))
  {
    o.fail("rho is still 0 at step 2000");
  }
  if (!same)
  {
    o.fail(o.detail);
  }
  if (first_s >= 1800.0)
  {
    o.fail("training took " + num(first_s) + " s, budget 1800 s");
  }
  o.detail += " [" + num(seconds_since(t0), 4) + " s total]";
  return o;
}

Outcome diagnostics()
{
  auto const t0 = Clock::now();
  Outcome    o;
  RngStream  rng(111);
  std::size_t mismatched = 0;
  for (int trial = 0; trial < 20; ++trial)
  {
    Shape        d   = testutil::random_nhwc(rng, 3, 8, 16);
    double const thr = rng.uniform(0.01, 0.9);
    auto const   s   = soft_layout(uniform_tensor(rng, d, -30.0, 30.0), rng.uniform(0.05, 1.0));
    mismatched += effective_entity_count(s, thr) ==
                          oracle::entity_count(to_vec(s.tensor()), d[0], d[1] * d[2], d[3], thr)
                      ? 0
                      : 1;
  }
  o.detail = "20 random layouts, " + std::to_string(mismatched) + " mismatches";
  if (mismatched != 0)
  {
    o.fail(o.detail);
  }

  // Entity-count traces with and without self-sampling. Reported only.
  constexpr std::uint64_t steps = 200;
  std::string             trace = "step,ssr_on,ssr_off\n";
  std::vector<double>     on, off;
  for (bool ssr : {true, false})
  {
    gan::TrainOptions opt;
    opt.gan.ssr = ssr;
    auto result = gan::run_training(opt, steps, {}, 0);
    for (auto const &m : result.metrics)
    {
      if (!m.all_finite())
      {
        o.fail(std::string("non-finite metric with SSR ") + (ssr ? "on" : "off"));
        break;
      }
      (ssr ? on : off).push_back(m.effective_entities);
    }
  }
  if (on.size() == steps && off.size() == steps)
  {
    for (std::uint64_t s = 0; s < steps; ++s)
    {
      trace += std::to_string(s) + "," + io::format_double(on[s]) + "," + io::format_double(off[s]) + "\n";
    }
    fs::path const dir = work_dir("entity_trace");
    fs::create_directories(dir);
    io::atomic_write(dir / "entity_trace.csv", trace);
    o.detail += "; entity count at step 0/" + std::to_string(steps - 1) + ": SSR on " + num(on.front()) + " -> " +
                num(on.back()) + ", SSR off " + num(off.front()) + " -> " + num(off.back()) +
                " (reported, trace in acceptance_out/entity_trace)";
  }
  check_runtime(o, t0, 300.0);
  return o;
}

Outcome serialization()
{
  auto const     t0  = Clock::now();
  Outcome        o;
  fs::path const dir = work_dir("serialization");
  fs::create_directories(dir);
  RngStream   rng(112);
  std::size_t bad = 0;
  for (int trial = 0; trial < 100; ++trial)
  {
    Shape const    d    = testutil::random_nhwc(rng, 3, 9, 7);
    fs::path const path = dir / ("t" + std::to_string(trial) + ".ant");
    if (trial % 2 == 0)
    {
      Tensor const t = uniform_tensor(rng, d, -1e3, 1e3);
      io::tensor_write(path, t);
      auto back = io::tensor_read(path);
      bad += std::holds_alternative<Tensor>(back) && bit_identical(std::get<Tensor>(back), t) ? 0 : 1;
    }
    else
    {
      std::vector<float> v(shape_numel(d));
      for (auto &e : v)
      {
        e = static_cast<float>(rng.uniform(-1e3, 1e3));
      }
      TensorF const t(d, std::move(v));
      io::tensor_write(path, t);
      auto back = io::tensor_read(path);
      bad += std::holds_alternative<TensorF>(back) && bit_identical(std::get<TensorF>(back), t) ? 0 : 1;
    }
  }
  o.detail = "100 tensors (50 f64, 50 f32), " + std::to_string(bad) + " mismatches";
  if (bad != 0)
  {
    o.fail(o.detail);
  }
  fs::path const data(ATTNORM_TEST_DATA);
  std::size_t    golden = 0;
  for (auto const &[value, file] : {std::pair{0.0, "zeros_4x3.pgm"}, {1.0, "ones_4x3.pgm"}, {0.5, "half_4x3.pgm"}})
  {
    io::pgm_write(dir / file, Tensor({3, 4}, value));
    if (io::read_file(dir / file) == io::read_file(data / file))
    {
      ++golden;
    }
    else
    {
      o.fail(std::string("PGM differs from golden ") + file);
    }
  }
  o.detail += "; " + std::to_string(golden) + "/3 PGM goldens match";
  check_runtime(o, t0, 5.0);
  return o;
}

}  // namespace

int main(int argc, char **argv)
{
  CLI::App app{"attnorm acceptance suite"};
  int      only = 0;
  app.add_option("--only", only, "run a single criterion (1-12)")->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<char const *, std::function<Outcome()>>> const criteria{
      {"identity at initialization", identity_at_init},
      {"layout simplex", layout_simplex},
      {"regional normalization oracle", regional_oracle},
      {"full-pipeline oracle", full_pipeline_oracle},
      {"gradient checks", gradient_checks},
      {"eval determinism", eval_determinism},
      {"FLOP-count slopes", flop_slopes},
      {"wall-clock slopes", wallclock_slopes},
      {"fit sanity", fit_sanity},
      {"toy GAN smoke", gan_smoke},
      {"diagnostic correctness", diagnostics},
      {"serialization", serialization},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i)
  {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1)
    {
      continue;
    }
    Outcome result;
    try
    {
      result = criteria[i].second();
    }
    catch (std::exception const &e)
    {
      result.fail(std::string("exception: ") + e.what());
    }
    failures += result.pass ? 0 : 1;
    std::cout << "criterion " << i + 1 << ": " << (result.pass ? "PASS" : "FAIL") << " " << criteria[i].first
              << ": " << result.detail << "\n"
              << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
