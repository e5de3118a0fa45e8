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

// Command-line front end. Needs CLI11.hpp on the include path.

#include "attnorm/attentive_norm.hpp"
#include "attnorm/bench.hpp"
#include "attnorm/gan/synth.hpp"
#include "attnorm/gan/trainer.hpp"
#include "attnorm/gradcheck_suite.hpp"
#include "attnorm/io.hpp"
#include "attnorm/run_config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

namespace attnorm::cli {

enum ExitCode : int
{
  kOk         = 0,
  kValidation = 1,
  kIo         = 2,
};

namespace detail {

inline StatMode stat_mode(RunConfig const &c)
{
  return c.stat == "batch" ? StatMode::batchwise : StatMode::instance;
}

inline MeanMode mean_mode(RunConfig const &c)
{
  return c.mean == "literal" ? MeanMode::literal : MeanMode::weighted;
}

inline gan::GanConfig gan_config(RunConfig const &c)
{
  gan::GanConfig g;
  g.an_n   = c.n;
  g.an_tau = c.tau;
  g.stat   = stat_mode(c);
  g.mean   = mean_mode(c);
  g.ssr    = c.ssr;
  g.use_an = c.an;
  g.d_an   = c.d_an;
  return g;
}

inline std::filesystem::path prepare_out(RunConfig const &c)
{
  std::filesystem::path const out(c.out);
  std::filesystem::create_directories(out);
  io::atomic_write(out / "run_config.txt", c.render());
  return out;
}

inline std::string fmt(char const *pattern, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

inline int run_gradcheck(RunConfig const &c, std::ostream &out)
{
  GradCheckOptions opt;
  opt.stat_mode     = stat_mode(c);
  opt.mean_mode     = mean_mode(c);
  auto const report = grad_check_suite(c.seed, c.seeds, opt);
  out << report.render();
  std::size_t passed = 0;
  for (auto const &e : report.entries)
  {
    passed += e.pass ? 1 : 0;
  }
  out << "gradcheck: " << passed << "/" << report.entries.size() << " pass\n";
  return report.all_pass() ? kOk : kValidation;
}

inline int run_bench(RunConfig const &c, std::ostream &out)
{
  auto const               dir = prepare_out(c);
  std::vector<bench::BenchRecord> records;
  for (auto module : {bench::Module::an, bench::Module::self_attention})
  {
    std::vector<double> px, wall, flops;
    for (auto side : c.sides)
    {
      bench::BenchShape shape;
      shape.height   = side;
      shape.width    = side;
      shape.channels = c.channels;
      shape.n        = c.n;
      auto rec       = bench::time_forward(module, shape, c.reps, c.warmups, c.seed);
      out << bench::module_name(module) << " side " << side << ": "
          << (rec.measurable ? fmt("%.3f ms", rec.median_ns() / 1e6) : std::string("unmeasurable"))
          << " (threads " << rec.threads << ")\n";
      px.push_back(static_cast<double>(shape.pixels()));
      flops.push_back(static_cast<double>(rec.flops));
      if (rec.measurable)
      {
        wall.push_back(rec.median_ns());
      }
      records.push_back(std::move(rec));
    }
    if (px.size() >= 3)
    {
      out << bench::module_name(module) << " flop slope "
          << fmt("%.4f", bench::fit_scaling_exponent(px, flops));
      if (wall.size() == px.size())
      {
        out << ", wall-clock slope " << fmt("%.4f", bench::fit_scaling_exponent(px, wall));
      }
      out << "\n";
    }
  }
  io::atomic_write(dir / "bench.csv", bench::render_csv(records));
  return kOk;
}

inline int run_demo_train(RunConfig const &c, std::ostream &out)
{
  auto const        dir = prepare_out(c);
  gan::TrainOptions opt;
  opt.gan   = gan_config(c);
  opt.batch = c.batch;
  opt.seed  = c.seed;
  auto const result = gan::run_training(opt, c.steps, dir, c.every, [&](gan::StepMetrics const &m) {
    if ((m.step + 1) % 100 == 0 || m.step == 0)
    {
      out << "step " << m.step << " L_D " << fmt("%.4f", m.loss_d) << " L_G " << fmt("%.4f", m.loss_g)
          << " rho " << fmt("%.3e", m.rho) << " entities " << fmt("%.2f", m.effective_entities) << " "
          << fmt("%.0f ms", m.ms) << "\n"
          << std::flush;
    }
  });
  out << "final rho " << io::format_double(result.final_rho) << "\n";
  return kOk;
}

inline int run_layout_dump(RunConfig const &c, std::ostream &out)
{
  auto const dir = prepare_out(c);
  bool const train = c.mode == "train";
  ANState    state;
  Tensor     x;
  if (!c.checkpoint.empty())
  {
    gan::GanConfig g_cfg = gan_config(c);
    g_cfg.use_an         = true;
    gan::ToyGenerator g(g_cfg, c.seed);
    io::restore_params(io::load_checkpoint(c.checkpoint), g.all_params());
    state                   = *g.an();
    state.config.train_mode = train;
    if (!c.input.empty())
    {
      x = io::tensor_read_as<double>(c.input);
    }
    else
    {
      // Features entering AN for a synthetic batch, one class per sample in turn.
      RngStream           rng = RngStream::derive(c.seed, 9);
      std::vector<double> z(c.batch * g_cfg.z_dim);
      for (auto &e : z)
      {
        e = rng.normal();
      }
      std::vector<std::size_t> labels(c.batch);
      for (std::size_t i = 0; i < c.batch; ++i)
      {
        labels[i] = i % g_cfg.num_classes;
      }
      g.set_train(false);
      Tape tape;
      x = g.forward(tape.constant(Tensor({c.batch, g_cfg.z_dim}, std::move(z))), labels, 0).an_input->value();
    }
  }
  else
  {
    ANConfig cfg;
    cfg.channels      = c.channels;
    cfg.n             = c.n;
    cfg.tau           = c.tau;
    cfg.stat_mode     = stat_mode(c);
    cfg.mean_mode     = mean_mode(c);
    cfg.self_sampling = c.ssr;
    cfg.train_mode    = train;
    state             = ANState::init(cfg, c.seed);
    if (!c.input.empty())
    {
      x = io::tensor_read_as<double>(c.input);
    }
    else
    {
      RngStream rng = RngStream::derive(c.seed, 9);
      x             = attnorm::detail::random_tensor(rng, {c.batch, 16, 16, c.channels});
    }
  }

  auto const        result = an_forward(x, state, 0);
  Tensor const     &s      = result.layout.tensor();
  std::size_t const N = s.dim(0), H = s.dim(1), W = s.dim(2), n = s.dim(3), C = x.dim(3);
  for (std::size_t b = 0; b < N; ++b)
  {
    for (std::size_t k = 0; k < n; ++k)
    {
      Tensor map({H, W});
      for (std::size_t p = 0; p < H * W; ++p)
      {
        map[p] = s[(b * H * W + p) * n + k];
      }
      io::pgm_write(dir / ("layout_" + std::to_string(b) + "_" + std::to_string(k) + ".pgm"), map);
    }
  }

  auto const  stats  = regional_stats(x, result.layout, state.config.stat_mode, state.config.mean_mode);
  std::size_t groups = stats.mu.dim(0);
  std::string summary = "sample,entity,mass,mean,std\n";
  std::string detail  = "sample,entity,channel,mean,std\n";
  for (std::size_t b = 0; b < groups; ++b)
  {
    for (std::size_t i = 0; i < n; ++i)
    {
      double mass = 0.0;
      for (std::size_t bb = 0; bb < N; ++bb)
      {
        if (groups == N && bb != b)
        {
          continue;
        }
        for (std::size_t p = 0; p < H * W; ++p)
        {
          mass += s[(bb * H * W + p) * n + i];
        }
      }
      double mu_avg = 0.0, sd_avg = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch)
      {
        double const mu = stats.mu[(b * n + i) * C + ch];
        double const sd = stats.sigma[(b * n + i) * C + ch];
        mu_avg += mu / static_cast<double>(C);
        sd_avg += sd / static_cast<double>(C);
        detail += std::to_string(b) + "," + std::to_string(i) + "," + std::to_string(ch) + "," +
                  io::format_double(mu) + "," + io::format_double(sd) + "\n";
      }
      summary += std::to_string(b) + "," + std::to_string(i) + "," + io::format_double(mass) + "," +
                 io::format_double(mu_avg) + "," + io::format_double(sd_avg) + "\n";
    }
  }
  io::atomic_write(dir / "regions.csv", summary);
  io::atomic_write(dir / "regions_channels.csv", detail);
  io::tensor_write(dir / "layout.ant", s);

  auto const counts = effective_entity_count(result.layout);
  out << "layout " << shape_str(s.dims()) << ", effective entities per sample:";
  for (auto k : counts)
  {
    out << " " << k;
  }
  out << "\n";
  return kOk;
}

inline int run_fixtures(RunConfig const &c, std::ostream &out)
{
  auto const dir = prepare_out(c);
  RngStream  rng = RngStream::derive(c.seed, 11);
  std::size_t written = 0;
  auto        put     = [&](std::string const &name, auto const &t) {
    io::tensor_write(dir / (name + ".ant"), t);
    ++written;
  };
  put("an_input_1x4x4x2", attnorm::detail::random_tensor(rng, {1, 4, 4, 2}));
  put("an_input_2x5x4x6", attnorm::detail::random_tensor(rng, {2, 5, 4, 6}));
  put("an_input_2x16x16x8", attnorm::detail::random_tensor(rng, {2, 16, 16, 8}));
  put("sa_input_1x3x3x4", attnorm::detail::random_tensor(rng, {1, 3, 3, 4}));
  {
    std::vector<float> v(12);
    for (auto &e : v)
    {
      e = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    put("f32_3x4", TensorF({3, 4}, std::move(v)));
  }
  gan::SynthSource synth(gan::SynthSpec{4, 32, 0.05, c.seed});
  for (std::size_t k = 0; k < 4; ++k)
  {
    put("synth_class" + std::to_string(k), synth.sample(k, 0));
  }
  ANConfig cfg;
  cfg.channels = 8;
  cfg.n        = 4;
  ANState an   = ANState::init(cfg, c.seed);
  std::vector<Param const *> params;
  for (auto *p : an.params())
  {
    params.push_back(p);
  }
  io::save_checkpoint(dir / "an_state_c8_n4", params);
  out << "wrote " << written << " tensors and 1 checkpoint to " << dir.string() << "\n";
  return kOk;
}

}  // namespace detail

/// Run one validated configuration.
inline int execute(RunConfig const &c, std::ostream &out)
{
  c.validate();
  if (c.command == "gradcheck")
  {
    return detail::run_gradcheck(c, out);
  }
  if (c.command == "bench")
  {
    return detail::run_bench(c, out);
  }
  if (c.command == "demo-train")
  {
    return detail::run_demo_train(c, out);
  }
  if (c.command == "layout-dump")
  {
    return detail::run_layout_dump(c, out);
  }
  if (c.command == "fixtures")
  {
    return detail::run_fixtures(c, out);
  }
  throw DomainError("unknown command '" + c.command + "'");
}

/**
 * attnorm <gradcheck|bench|demo-train|layout-dump|fixtures|replay> [flags]
 * Exit codes: 0 success, 1 validation failure, 2 I/O failure.
 */
inline int cli_dispatch(int argc, char const *const *argv, std::ostream &out = std::cout,
                        std::ostream &err = std::cerr)
{
  CLI::App app{"attentive normalization toolkit", "attnorm"};
  app.require_subcommand(1);
  RunConfig   cfg;
  std::string replay_path;

  auto common = [&](CLI::App *sub) {
    sub->add_option("--seed", cfg.seed, "master seed");
    sub->add_option("--n", cfg.n, "number of semantic entities");
    sub->add_option("--tau", cfg.tau, "layout softmax temperature");
    sub->add_option("--stat", cfg.stat, "statistics scope")->check(CLI::IsMember({"instance", "batch"}));
    sub->add_option("--mean", cfg.mean, "regional mean form")->check(CLI::IsMember({"weighted", "literal"}));
    sub->add_option("--out", cfg.out, "output directory");
  };

  auto *gradcheck = app.add_subcommand("gradcheck", "run the gradient-check suite");
  common(gradcheck);
  gradcheck->add_option("--seeds", cfg.seeds, "number of consecutive seeds");

  auto *bench_cmd = app.add_subcommand("bench", "time AN against self-attention, write bench.csv");
  common(bench_cmd);
  bench_cmd->add_option("--sides", cfg.sides, "square sides")->delimiter(',');
  bench_cmd->add_option("--channels", cfg.channels, "channels");
  bench_cmd->add_option("--reps", cfg.reps, "timed repetitions (>= 10)");
  bench_cmd->add_option("--warmups", cfg.warmups, "warmup repetitions (>= 3)");

  auto *train = app.add_subcommand("demo-train", "train the toy conditional GAN");
  common(train);
  train->add_option("--steps", cfg.steps, "training steps");
  train->add_option("--batch", cfg.batch, "batch size");
  train->add_option("--every", cfg.every, "checkpoint / sample interval");
  train->add_option("--ssr", cfg.ssr, "self-sampling branch on (true) or t frozen at 0 (false)");
  train->add_option("--an", cfg.an, "AN in the generator (false = identity)");
  train->add_option("--d-an", cfg.d_an, "AN after the first discriminator block");

  auto *layout = app.add_subcommand("layout-dump", "write layout maps and per-region statistics");
  common(layout);
  layout->add_option("--mode", cfg.mode, "train or eval")->check(CLI::IsMember({"train", "eval"}));
  layout->add_option("--channels", cfg.channels, "channels of a fresh layer");
  layout->add_option("--batch", cfg.batch, "synthetic batch size");
  layout->add_option("--ssr", cfg.ssr, "self-sampling branch");
  layout->add_option("--input", cfg.input, "ANT1 feature tensor [N,H,W,C]");
  layout->add_option("--checkpoint", cfg.checkpoint, "checkpoint stem from demo-train");

  auto *fixtures = app.add_subcommand("fixtures", "write the ANT1 fixture corpus");
  common(fixtures);

  auto *replay = app.add_subcommand("replay", "re-run a saved run_config.txt");
  replay->add_option("config", replay_path, "run_config.txt path")->required();

  try
  {
    app.parse(argc, argv);
  }
  catch (CLI::ParseError const &e)
  {
    int const code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try
  {
    if (replay->parsed())
    {
      return execute(RunConfig::parse(io::read_file(replay_path)), out);
    }
    cfg.command = app.get_subcommands().front()->get_name();
    if (cfg.command == "layout-dump" && !app.get_subcommands().front()->count("--channels") &&
        cfg.checkpoint.empty())
    {
      cfg.channels = 16;
    }
    return execute(cfg, out);
  }
  catch (io::IoError const &e)
  {
    err << "attnorm: I/O error: " << e.what() << "\n";
    return kIo;
  }
  catch (std::filesystem::filesystem_error const &e)
  {
    err << "attnorm: I/O error: " << e.what() << "\n";
    return kIo;
  }
  catch (std::exception const &e)
  {
    err << "attnorm: " << e.what() << "\n";
    return kValidation;
  }
}

}  // namespace attnorm::cli
