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

#include "attnorm/attentive_norm.hpp"
#include "attnorm/autograd.hpp"
#include "attnorm/rng.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace attnorm::gan {

struct GanConfig
{
  std::size_t num_classes = 4;
  std::size_t z_dim       = 32;
  std::size_t embed_dim   = 16;
  std::size_t g_base      = 32;  // channels at 4x4 and 8x8
  std::size_t g_mid       = 16;  // channels at 16x16, where AN sits
  std::size_t g_top       = 8;   // channels at 32x32
  std::size_t d_widths[3] = {16, 32, 32};

  bool        use_an   = true;   // false swaps the generator AN for identity
  bool        d_an     = false;  // AN after the first discriminator block
  std::size_t an_n     = 16;
  double      an_tau   = 0.1;
  double      lambda_o = 1e-4;
  bool        ssr      = true;
  StatMode    stat     = StatMode::instance;
  MeanMode    mean     = MeanMode::weighted;

  ANConfig an_config(std::size_t channels) const
  {
    ANConfig c;
    c.channels      = channels;
    c.n             = an_n;
    c.tau           = an_tau;
    c.lambda_o      = lambda_o;
    c.stat_mode     = stat;
    c.mean_mode     = mean;
    c.self_sampling = ssr;
    return c;
  }
};

namespace detail {

inline Tensor he_normal(RngStream &rng, std::size_t fan_in, Shape dims)
{
  double const        sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(dims));
  for (auto &e : v)
  {
    e = rng.normal(0.0, sd);
  }
  return Tensor(std::move(dims), std::move(v));
}

}  // namespace detail

/// Instance normalization followed by a per-class scale and shift.
struct CondIN
{
  Param gamma;  // [K, C], starts at 1
  Param beta;   // [K, C], starts at 0

  static CondIN init(std::string const &name, std::size_t classes, std::size_t channels)
  {
    return {Param(name + ".gamma", Tensor({classes, channels}, 1.0)),
            Param(name + ".beta", Tensor({classes, channels}, 0.0))};
  }

  Var operator()(Var x, std::vector<std::size_t> const &labels)
  {
    Tape       &tape = *x.tape;
    Shape const d    = x.dims();
    Var         mu   = ag::mean_axes(x, {1, 2});
    Var         dev  = ag::sub(x, mu);
    Var         var  = ag::mean_axes(ag::square(dev), {1, 2});
    Var         xhat = ag::div(dev, ag::sqrt(ag::add_scalar(var, 1e-5)));
    Var g = ag::reshape(ag::embedding(tape.param(gamma), labels), {d[0], 1, 1, d[3]});
    Var b = ag::reshape(ag::embedding(tape.param(beta), labels), {d[0], 1, 1, d[3]});
    return ag::add(ag::mul(xhat, g), b);
  }
};

/// Conv weight [k*k*Cin, Cout] and bias [Cout].
struct Conv
{
  Param       w;
  Param       b;
  std::size_t k      = 3;
  std::size_t stride = 1;

  static Conv init(std::string const &name, RngStream &rng, std::size_t cin, std::size_t cout,
                   std::size_t k, std::size_t stride = 1, bool bias = true)
  {
    Conv c;
    c.w      = Param(name + ".w", detail::he_normal(rng, k * k * cin, {k * k * cin, cout}));
    c.b      = bias ? Param(name + ".b", Tensor({cout}, 0.0)) : Param();
    c.k      = k;
    c.stride = stride;
    return c;
  }

  bool has_bias() const
  {
    return !b.name.empty();
  }

  Var operator()(Var x)
  {
    Tape &tape = *x.tape;
    Var   y    = ag::conv2d(x, tape.param(w), k, stride);
    return has_bias() ? ag::add(y, tape.param(b)) : y;
  }

  void collect(std::vector<Param *> &out)
  {
    out.push_back(&w);
    if (has_bias())
    {
      out.push_back(&b);
    }
  }
};

/// Upsampling residual block; `an` (if any) sits after the first conv.
struct GenBlock
{
  CondIN                 norm1, norm2;
  Conv                   conv1, conv2, shortcut;
  std::optional<ANState> an;

  static GenBlock init(std::string const &name, RngStream &rng, std::size_t classes,
                       std::size_t cin, std::size_t cout)
  {
    GenBlock b;
    b.norm1    = CondIN::init(name + ".norm1", classes, cin);
    b.conv1    = Conv::init(name + ".conv1", rng, cin, cout, 3);
    b.norm2    = CondIN::init(name + ".norm2", classes, cout);
    b.conv2    = Conv::init(name + ".conv2", rng, cout, cout, 3);
    b.shortcut = Conv::init(name + ".shortcut", rng, cin, cout, 1, 1, false);
    return b;
  }

  struct Out
  {
    Var                      out;
    std::optional<ANForward> an;
    std::optional<Var>       an_input;
  };

  Out forward(Var x, std::vector<std::size_t> const &labels, std::uint64_t stream)
  {
    Out r;
    Var h = ag::relu(norm1(x, labels));
    h     = conv1(ag::upsample_nearest_2x(h));
    if (an)
    {
      r.an_input = h;
      r.an       = an_forward(h, *an, stream);
      h          = r.an->out;
    }
    h     = conv2(ag::relu(norm2(h, labels)));
    r.out = ag::add(h, shortcut(ag::upsample_nearest_2x(x)));
    return r;
  }

  void collect(std::vector<Param *> &out, bool ssr)
  {
    for (Param *p : {&norm1.gamma, &norm1.beta, &norm2.gamma, &norm2.beta})
    {
      out.push_back(p);
    }
    conv1.collect(out);
    conv2.collect(out);
    shortcut.collect(out);
    if (an)
    {
      for (Param *p : an->params())
      {
        if (ssr || p != &an->t)
        {
          out.push_back(p);
        }
      }
    }
  }
};

struct GeneratorOut
{
  Var                      image;     // [N, 32, 32, 1]
  std::optional<ANForward> an;        // bound when the generator carries AN
  std::optional<Var>       an_input;  // features entering AN
};

/// z and class embedding -> 4x4 seed -> three upsampling blocks -> 32x32x1.
class ToyGenerator
{
public:
  ToyGenerator() = default;

  ToyGenerator(GanConfig const &cfg, std::uint64_t seed)
    : cfg_(cfg)
  {
    RngStream rng = RngStream::derive(seed, 1);
    embed_ = Param("g.embed", detail::he_normal(rng, 1, {cfg.num_classes, cfg.embed_dim}));
    std::size_t const in = cfg.z_dim + cfg.embed_dim;
    dense_w_ = Param("g.dense.w", detail::he_normal(rng, in, {in, 16 * cfg.g_base}));
    dense_b_ = Param("g.dense.b", Tensor({16 * cfg.g_base}, 0.0));
    blocks_.push_back(GenBlock::init("g.block1", rng, cfg.num_classes, cfg.g_base, cfg.g_base));
    blocks_.push_back(GenBlock::init("g.block2", rng, cfg.num_classes, cfg.g_base, cfg.g_mid));
    blocks_.push_back(GenBlock::init("g.block3", rng, cfg.num_classes, cfg.g_mid, cfg.g_top));
    if (cfg.use_an)
    {
      blocks_[1].an = ANState::init(cfg.an_config(cfg.g_mid), mix64(seed + 5), "g.block2.an.");
    }
    out_ = Conv::init("g.out", rng, cfg.g_top, 1, 3);
  }

  GeneratorOut forward(Var z, std::vector<std::size_t> const &labels, std::uint64_t stream)
  {
    Tape             &tape = *z.tape;
    std::size_t const N    = labels.size();
    if (z.dims() != Shape{N, cfg_.z_dim})
    {
      throw ShapeError("generator noise must be [" + std::to_string(N) + ", " +
                       std::to_string(cfg_.z_dim) + "], got " + shape_str(z.dims()));
    }
    Var e = ag::embedding(tape.param(embed_), labels);
    Var h = ag::add(ag::matmul(ag::concat_cols(z, e), tape.param(dense_w_)), tape.param(dense_b_));
    h     = ag::reshape(h, {N, 4, 4, cfg_.g_base});

    GeneratorOut r;
    for (auto &block : blocks_)
    {
      auto o = block.forward(h, labels, stream);
      h      = o.out;
      if (o.an)
      {
        r.an       = o.an;
        r.an_input = o.an_input;
      }
    }
    r.image = ag::softsign(out_(ag::relu(h)));
    return r;
  }

  /// Toggle the AN sampling branch (eval mode treats t as 0).
  void set_train(bool train)
  {
    if (ANState *a = an())
    {
      a->config.train_mode = train;
    }
  }

  ANState *an()
  {
    return blocks_.size() > 1 && blocks_[1].an ? &*blocks_[1].an : nullptr;
  }

  std::vector<Param *> params()
  {
    std::vector<Param *> out{&embed_, &dense_w_, &dense_b_};
    for (auto &b : blocks_)
    {
      b.collect(out, cfg_.ssr);
    }
    out_.collect(out);
    return out;
  }

  /// Every Param, including ones the optimizer leaves frozen.
  std::vector<Param *> all_params()
  {
    auto out = params();
    if (ANState *a = an(); a != nullptr && !cfg_.ssr)
    {
      out.push_back(&a->t);
    }
    return out;
  }

  GanConfig const &config() const noexcept
  {
    return cfg_;
  }

private:
  GanConfig             cfg_;
  Param                 embed_, dense_w_, dense_b_;
  std::vector<GenBlock> blocks_;
  Conv                  out_;
};

/// Three stride-2 conv blocks, mean pooling, linear logit plus class projection.
class ToyDiscriminator
{
public:
  ToyDiscriminator() = default;

  ToyDiscriminator(GanConfig const &cfg, std::uint64_t seed)
    : cfg_(cfg)
  {
    RngStream   rng = RngStream::derive(seed, 2);
    std::size_t cin = 1;
    for (std::size_t i = 0; i < 3; ++i)
    {
      convs_.push_back(Conv::init("d.conv" + std::to_string(i + 1), rng, cin, cfg.d_widths[i], 3, 2));
      cin = cfg.d_widths[i];
    }
    if (cfg.d_an)
    {
      an_ = ANState::init(cfg.an_config(cfg.d_widths[0]), mix64(seed + 6), "d.conv1.an.");
    }
    // Zero head: every logit is 0 before the first update.
    head_w_ = Param("d.head.w", Tensor({cin, 1}, 0.0));
    head_b_ = Param("d.head.b", Tensor({1}, 0.0));
    embed_  = Param("d.embed", Tensor({cfg.num_classes, cin}, 0.0));
  }

  /// Logits [N, 1].
  Var forward(Var image, std::vector<std::size_t> const &labels, std::uint64_t stream)
  {
    Tape             &tape = *image.tape;
    std::size_t const N    = labels.size();
    if (image.dims().size() != 4 || image.dims()[0] != N)
    {
      throw ShapeError("discriminator input " + shape_str(image.dims()) + " does not match " +
                       std::to_string(N) + " labels");
    }
    Var h = image;
    for (std::size_t i = 0; i < convs_.size(); ++i)
    {
      h = convs_[i](h);
      if (i == 0 && an_)
      {
        h = an_forward(h, *an_, stream).out;
      }
      h = ag::leaky_relu(h, 0.2);
    }
    std::size_t const C = h.dims()[3];
    Var pooled = ag::reshape(ag::mean_axes(h, {1, 2}), {N, C});
    Var logit  = ag::add(ag::matmul(pooled, tape.param(head_w_)), tape.param(head_b_));
    Var proj   = ag::sum_axes(ag::mul(ag::embedding(tape.param(embed_), labels), pooled), {1});
    return ag::add(logit, proj);
  }

  void set_train(bool train)
  {
    if (an_)
    {
      an_->config.train_mode = train;
    }
  }

  std::vector<Param *> params()
  {
    std::vector<Param *> out;
    for (auto &c : convs_)
    {
      c.collect(out);
    }
    if (an_)
    {
      for (Param *p : an_->params())
      {
        if (cfg_.ssr || p != &an_->t)
        {
          out.push_back(p);
        }
      }
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    out.push_back(&embed_);
    return out;
  }

  std::vector<Param *> all_params()
  {
    auto out = params();
    if (an_ && !cfg_.ssr)
    {
      out.push_back(&an_->t);
    }
    return out;
  }

private:
  GanConfig              cfg_;
  std::vector<Conv>      convs_;
  std::optional<ANState> an_;
  Param                  head_w_, head_b_, embed_;
};

//------------------------------------------------------------------------------
// Losses
//------------------------------------------------------------------------------

/// mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).
inline Var hinge_d_loss(Var real_logits, Var fake_logits)
{
  if (real_logits.value().size() == 0 || fake_logits.value().size() == 0)
  {
    throw ShapeError("hinge_d_loss needs nonempty logits");
  }
  Var r = ag::mean(ag::relu(ag::add_scalar(ag::neg(real_logits), 1.0)));
  Var f = ag::mean(ag::relu(ag::add_scalar(fake_logits, 1.0)));
  return ag::add(r, f);
}

/// -mean(fake).
inline Var hinge_g_loss(Var fake_logits)
{
  return ag::neg(ag::mean(fake_logits));
}

inline double hinge_d_loss(std::span<double const> real, std::span<double const> fake)
{
  if (real.empty() || fake.empty())
  {
    throw ShapeError("hinge_d_loss needs nonempty logits");
  }
  Tape tape;
  Var  r = tape.constant(Tensor({real.size()}, std::vector<double>(real.begin(), real.end())));
  Var  f = tape.constant(Tensor({fake.size()}, std::vector<double>(fake.begin(), fake.end())));
  return hinge_d_loss(r, f).value().item();
}

inline double hinge_g_loss(std::span<double const> fake)
{
  if (fake.empty())
  {
    throw ShapeError("hinge_g_loss needs nonempty logits");
  }
  Tape tape;
  return hinge_g_loss(tape.constant(Tensor({fake.size()}, std::vector<double>(fake.begin(), fake.end()))))
      .value()
      .item();
}

//------------------------------------------------------------------------------
// Adam
//------------------------------------------------------------------------------

struct AdamOptions
{
  double lr    = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps   = 1e-8;
};

struct AdamMoments
{
  Tensor m;
  Tensor v;
};

/// One bias-corrected Adam step on `p` using p.grad; step counts from 1.
inline void adam_update(Param &p, AdamMoments &mom, AdamOptions const &opt, std::uint64_t step)
{
  if (step == 0)
  {
    throw DomainError("adam step counts from 1");
  }
  if (mom.m.size() != p.value.size())
  {
    mom.m = zeros_like(p.value);
    mom.v = zeros_like(p.value);
  }
  double const c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  double const c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  auto         w  = p.value.mutable_data();
  auto         m  = mom.m.mutable_data();
  auto         v  = mom.v.mutable_data();
  auto const   g  = p.grad.data();
  for (std::size_t i = 0; i < w.size(); ++i)
  {
    m[i]             = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
    v[i]             = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
    double const mh  = m[i] / c1;
    double const vh  = v[i] / c2;
    w[i]            -= opt.lr * mh / (std::sqrt(vh) + opt.eps);
  }
}

class Adam
{
public:
  Adam() = default;
  Adam(std::vector<Param *> params, AdamOptions opt)
    : params_(std::move(params))
    , moments_(params_.size())
    , opt_(opt)
  {}

  void step()
  {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i)
    {
      adam_update(*params_[i], moments_[i], opt_, step_);
    }
  }

  void zero_grad()
  {
    for (auto *p : params_)
    {
      p->zero_grad();
    }
  }

  std::uint64_t steps() const noexcept
  {
    return step_;
  }

private:
  std::vector<Param *>     params_;
  std::vector<AdamMoments> moments_;
  AdamOptions              opt_;
  std::uint64_t            step_ = 0;
};

}  // namespace attnorm::gan
