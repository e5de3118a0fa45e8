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

#include "attnorm/gan/model.hpp"
#include "attnorm/gan/synth.hpp"
#include "attnorm/io.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnorm::gan {

struct TrainOptions
{
  GanConfig     gan;
  std::size_t   batch = 16;
  double        noise = 0.05;  // synthetic data noise amplitude
  AdamOptions   g_opt{1e-4, 0.0, 0.999, 1e-8};
  AdamOptions   d_opt{4e-4, 0.0, 0.999, 1e-8};
  std::uint64_t seed = 0;
  std::filesystem::path dump_dir;  // where a diverged step dumps its tensors; empty = no dump
};

/// Losses are from this step; rho is the gate value at the start of the step.
struct StepMetrics
{
  std::uint64_t step               = 0;
  double        loss_d             = 0.0;
  double        loss_g             = 0.0;
  double        loss_o             = 0.0;
  double        rho                = 0.0;
  double        effective_entities = 0.0;  // batch mean; 0 without AN
  double        ms                 = 0.0;

  bool all_finite() const
  {
    return std::isfinite(loss_d) && std::isfinite(loss_g) && std::isfinite(loss_o) &&
           std::isfinite(rho) && std::isfinite(effective_entities) && std::isfinite(ms);
  }
};

class TrainingDiverged : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline std::string metrics_csv_header()
{
  return "step,L_D,L_G,L_o,rho,effective_entities,ms\n";
}

inline std::string metrics_csv_row(StepMetrics const &m)
{
  using io::format_double;
  return std::to_string(m.step) + "," + format_double(m.loss_d) + "," + format_double(m.loss_g) + "," +
         format_double(m.loss_o) + "," + format_double(m.rho) + "," +
         format_double(m.effective_entities) + "," + format_double(m.ms) + "\n";
}

/**
 * One discriminator update then one generator update per step. Seed
 * streams: derive(seed, 1) G init, derive(seed, 2) D init,
 * derive(seed, 3) noise and fake labels, mix64(seed + 4) data.
 * Holds raw Param pointers into its own members, so it does not move.
 */
class Trainer
{
public:
  explicit Trainer(TrainOptions opt)
    : opt_(std::move(opt))
    , g_(opt_.gan, opt_.seed)
    , d_(opt_.gan, opt_.seed)
    , g_adam_(g_.params(), opt_.g_opt)
    , d_adam_(d_.params(), opt_.d_opt)
    , noise_(RngStream::derive(opt_.seed, 3))
    , data_(SynthSpec{opt_.gan.num_classes, 32, opt_.noise, mix64(opt_.seed + 4)})
  {
    if (opt_.batch == 0)
    {
      throw DomainError("training batch must be positive");
    }
  }

  Trainer(Trainer const &)            = delete;
  Trainer &operator=(Trainer const &) = delete;

  StepMetrics train_step()
  {
    auto [images, labels] = data_.next_batch(opt_.batch);
    return train_step(images, labels);
  }

  StepMetrics train_step(Tensor const &real, std::vector<std::size_t> const &labels)
  {
    auto const  t0 = std::chrono::steady_clock::now();
    StepMetrics m;
    m.step = step_;
    if (ANState *a = g_.an())
    {
      m.rho = a->rho.value[0];
    }
    g_.set_train(true);
    d_.set_train(true);
    std::size_t const N = labels.size();

    // Discriminator.
    {
      d_adam_.zero_grad();
      Tape tape;
      auto fake_labels = draw_labels(N);
      Var  fake = ag::detach(g_.forward(tape.constant(draw_noise(N)), fake_labels, 2 * step_).image);
      Var  real_logits = d_.forward(tape.constant(real), labels, 2 * step_);
      Var  fake_logits = d_.forward(fake, fake_labels, 2 * step_);
      Var  loss        = hinge_d_loss(real_logits, fake_logits);
      m.loss_d         = loss.value().item();
      if (!std::isfinite(m.loss_d))
      {
        diverged("L_D", {{"real", real}, {"fake", fake.value()}, {"real_logits", real_logits.value()},
                         {"fake_logits", fake_logits.value()}});
      }
      tape.backward(loss);
      d_adam_.step();
    }

    // Generator, with the orthogonal penalty on W_f.
    {
      g_adam_.zero_grad();
      Tape tape;
      auto fake_labels = draw_labels(N);
      auto gen         = g_.forward(tape.constant(draw_noise(N)), fake_labels, 2 * step_ + 1);
      Var  logits      = d_.forward(gen.image, fake_labels, 2 * step_ + 1);
      Var  loss_g      = hinge_g_loss(logits);
      Var  total       = loss_g;
      if (ANState *a = g_.an())
      {
        Var loss_o = orthogonal_reg_loss(tape.param(a->w_f), a->config.lambda_o);
        m.loss_o   = loss_o.value().item();
        total      = ag::add(loss_g, loss_o);
        auto count = effective_entity_count(SemanticLayout(gen.an->layout.value()));
        double acc = 0.0;
        for (auto c : count)
        {
          acc += static_cast<double>(c);
        }
        m.effective_entities = acc / static_cast<double>(count.size());
      }
      m.loss_g = loss_g.value().item();
      if (!std::isfinite(m.loss_g) || !std::isfinite(m.loss_o))
      {
        diverged("L_G", {{"fake", gen.image.value()}, {"fake_logits", logits.value()}});
      }
      tape.backward(total);
      g_adam_.step();
      d_adam_.zero_grad();  // D saw gradients through the G objective; discard them
    }

    ++step_;
    m.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

  /// Eval-mode samples, `per_class` rows by num_classes columns, mapped to [0, 1].
  Tensor sample_grid(std::size_t per_class = 4)
  {
    std::size_t const K = opt_.gan.num_classes;
    std::size_t const N = per_class * K;
    RngStream         rng = RngStream::derive(opt_.seed, 7);  // fixed noise across calls
    std::vector<double> z(N * opt_.gan.z_dim);
    for (auto &e : z)
    {
      e = rng.normal();
    }
    std::vector<std::size_t> labels(N);
    for (std::size_t i = 0; i < N; ++i)
    {
      labels[i] = i % K;
    }
    g_.set_train(false);
    Tape tape;
    auto img = g_.forward(tape.constant(Tensor({N, opt_.gan.z_dim}, std::move(z))), labels, 0).image.value();
    g_.set_train(true);

    std::size_t const S = 32;
    Tensor            grid({per_class * S, K * S});
    for (std::size_t i = 0; i < N; ++i)
    {
      std::size_t const r0 = (i / K) * S, c0 = (i % K) * S;
      for (std::size_t y = 0; y < S; ++y)
      {
        for (std::size_t x = 0; x < S; ++x)
        {
          grid[(r0 + y) * K * S + c0 + x] = 0.5 * (img[(i * S + y) * S + x] + 1.0);
        }
      }
    }
    return grid;
  }

  std::vector<Param const *> checkpoint_params()
  {
    std::vector<Param const *> out;
    for (auto *p : g_.all_params())
    {
      out.push_back(p);
    }
    for (auto *p : d_.all_params())
    {
      out.push_back(p);
    }
    return out;
  }

  ToyGenerator &generator() noexcept
  {
    return g_;
  }
  ToyDiscriminator &discriminator() noexcept
  {
    return d_;
  }
  std::uint64_t steps_done() const noexcept
  {
    return step_;
  }
  TrainOptions const &options() const noexcept
  {
    return opt_;
  }

private:
  Tensor draw_noise(std::size_t N)
  {
    std::vector<double> z(N * opt_.gan.z_dim);
    for (auto &e : z)
    {
      e = noise_.normal();
    }
    return Tensor({N, opt_.gan.z_dim}, std::move(z));
  }

  std::vector<std::size_t> draw_labels(std::size_t N)
  {
    std::vector<std::size_t> y(N);
    for (auto &e : y)
    {
      e = static_cast<std::size_t>(noise_.uniform_int(opt_.gan.num_classes));
    }
    return y;
  }

  [[noreturn]] void diverged(std::string const &what,
                             std::vector<std::pair<std::string, Tensor>> const &tensors)
  {
    std::string msg = "non-finite " + what + " at step " + std::to_string(step_);
    if (!opt_.dump_dir.empty())
    {
      std::filesystem::create_directories(opt_.dump_dir);
      for (auto const &[name, t] : tensors)
      {
        io::tensor_write(opt_.dump_dir / ("diverged_step" + std::to_string(step_) + "_" + name + ".ant"), t);
      }
      msg += "; tensors dumped to " + opt_.dump_dir.string();
    }
    throw TrainingDiverged(msg);
  }

  TrainOptions     opt_;
  ToyGenerator     g_;
  ToyDiscriminator d_;
  Adam             g_adam_;
  Adam             d_adam_;
  RngStream        noise_;
  SynthSource      data_;
  std::uint64_t    step_ = 0;
};

struct RunOutputs
{
  std::vector<StepMetrics> metrics;
  double                   final_rho = 0.0;
};

/**
 * Train for `steps`, writing metrics.csv, checkpoints ckpt_<step> and
 * sample grids samples_<step>.pgm into `out` every `every` steps and at
 * the end. `out` empty skips all files.
 */
inline RunOutputs run_training(TrainOptions opt, std::uint64_t steps, std::filesystem::path const &out,
                               std::uint64_t every = 500,
                               std::function<void(StepMetrics const &)> const &on_step = {})
{
  if (!out.empty())
  {
    std::filesystem::create_directories(out);
    if (opt.dump_dir.empty())
    {
      opt.dump_dir = out;
    }
  }
  Trainer     trainer(std::move(opt));
  RunOutputs  result;
  std::string csv = metrics_csv_header();
  auto        snapshot = [&](std::uint64_t step) {
    if (out.empty())
    {
      return;
    }
    std::string const tag = std::to_string(step);
    io::save_checkpoint(out / ("ckpt_" + tag), trainer.checkpoint_params());
    io::pgm_write(out / ("samples_" + tag + ".pgm"), trainer.sample_grid());
    io::atomic_write(out / "metrics.csv", csv);
  };
  for (std::uint64_t s = 0; s < steps; ++s)
  {
    StepMetrics m = trainer.train_step();
    csv += metrics_csv_row(m);
    result.metrics.push_back(m);
    if (on_step)
    {
      on_step(m);
    }
    if (every != 0 && (s + 1) % every == 0 && s + 1 != steps)
    {
      snapshot(s + 1);
    }
  }
  snapshot(steps);
  if (ANState *a = trainer.generator().an())
  {
    result.final_rho = a->rho.value[0];
  }
  return result;
}

}  // namespace attnorm::gan
