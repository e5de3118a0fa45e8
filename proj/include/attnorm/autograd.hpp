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

#include "attnorm/tensor.hpp"

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace attnorm {

class GraphError : public std::logic_error
{
public:
  using std::logic_error::logic_error;
};

/// A learnable tensor with its gradient accumulator.
struct Param
{
  std::string name;
  Tensor      value;
  Tensor      grad;

  Param() = default;
  Param(std::string n, Tensor v)
    : name(std::move(n))
    , value(std::move(v))
    , grad(zeros_like(value))
  {}

  void zero_grad()
  {
    std::fill(grad.mutable_data().begin(), grad.mutable_data().end(), 0.0);
  }
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var
{
  Tape       *tape = nullptr;
  std::size_t id   = 0;

  /// Reference into the tape; invalidated when the tape grows.
  Tensor const &value() const;
  Shape         dims() const
  {
    return value().dims();
  }
};

/**
 * Records primitive applications in execution order and replays them in
 * reverse to accumulate gradients. Leaves bound to a Param push their
 * gradient into Param::grad; leaves made with input() keep it on the tape.
 */
class Tape
{
public:
  using BackwardFn = std::function<void(Tensor const &grad_out)>;

  Tape() = default;
  Tape(Tape const &)            = delete;
  Tape &operator=(Tape const &) = delete;

  Var constant(Tensor v)
  {
    return push(Node{std::move(v), {}, false, false, nullptr, {}});
  }

  Var input(Tensor v)
  {
    return push(Node{std::move(v), {}, false, true, nullptr, {}});
  }

  Var param(Param &p)
  {
    return push(Node{p.value, {}, false, true, &p, {}});
  }

  /// Record an op result. `fn` runs during backward only if some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn)
  {
    bool needs = false;
    for (auto const &in : inputs)
    {
      check_owned(in);
      needs = needs || nodes_[in.id].requires_grad;
    }
    return push(Node{std::move(value), {}, false, needs, nullptr, needs ? std::move(fn) : BackwardFn{}});
  }

  Tensor const &value(Var v) const
  {
    check_owned(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var v) const
  {
    check_owned(v);
    return nodes_[v.id].requires_grad;
  }

  /// Gradient held for `v` after backward(); zeros if nothing reached it.
  Tensor grad(Var v) const
  {
    check_owned(v);
    auto const &node = nodes_[v.id];
    return node.has_grad ? node.grad : zeros_like(node.value);
  }

  void accumulate(Var v, Tensor const &g)
  {
    auto &node = nodes_[v.id];
    if (!node.requires_grad)
    {
      return;
    }
    if (g.dims() != node.value.dims())
    {
      throw ShapeError("gradient dims " + shape_str(g.dims()) + " do not match value dims " +
                       shape_str(node.value.dims()));
    }
    if (!node.has_grad)
    {
      node.grad     = g;
      node.has_grad = true;
      return;
    }
    auto dst = node.grad.mutable_data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i)
    {
      dst[i] += src[i];
    }
  }

  /// Reverse sweep from a one-element `loss`. Param gradients accumulate across calls.
  void backward(Var loss)
  {
    if (loss.tape != this || loss.id >= nodes_.size())
    {
      throw GraphError("loss node is not on this tape");
    }
    if (nodes_[loss.id].value.size() != 1)
    {
      throw ShapeError("backward needs a scalar loss, got dims " +
                       shape_str(nodes_[loss.id].value.dims()));
    }
    for (auto &node : nodes_)
    {
      node.has_grad = false;
      node.grad     = Tensor{};
    }
    accumulate(loss, ones_like(nodes_[loss.id].value));
    for (std::size_t i = loss.id + 1; i-- > 0;)
    {
      auto &node = nodes_[i];
      if (!node.has_grad || !node.requires_grad)
      {
        continue;
      }
      if (node.param != nullptr)
      {
        auto dst = node.param->grad.mutable_data();
        auto src = node.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k)
        {
          dst[k] += src[k];
        }
      }
      if (node.fn)
      {
        node.fn(node.grad);
      }
    }
  }

  std::size_t size() const noexcept
  {
    return nodes_.size();
  }

private:
  struct Node
  {
    Tensor     value;
    Tensor     grad;
    bool       has_grad;
    bool       requires_grad;
    Param     *param;
    BackwardFn fn;
  };

  void check_owned(Var v) const
  {
    if (v.tape != this || v.id >= nodes_.size())
    {
      throw GraphError("variable is not on this tape");
    }
  }

  Var push(Node node)
  {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline Tensor const &Var::value() const
{
  if (tape == nullptr)
  {
    throw GraphError("unbound variable");
  }
  return tape->value(*this);
}

/// Differentiable primitives over Tape variables.
namespace ag {

namespace detail {

inline Tape &same_tape(Var a, Var b)
{
  if (a.tape == nullptr || a.tape != b.tape)
  {
    throw GraphError("operands live on different tapes");
  }
  return *a.tape;
}

inline Tensor broadcast_to(Tensor const &g, Shape const &dims)
{
  if (g.dims() == dims)
  {
    return g;
  }
  return elementwise(BinaryOp::add, Tensor(dims), g);
}

template <typename Fn>
Var unary(Var a, Tensor value, Fn &&local_grad)
{
  Tape &t = *a.tape;
  Var   out{};
  out = t.record(std::move(value), {a}, [&t, a, f = std::forward<Fn>(local_grad)](Tensor const &g) {
    t.accumulate(a, f(g));
  });
  return out;
}

}  // namespace detail

inline Var binary(BinaryOp op, Var a, Var b)
{
  Tape        &t  = detail::same_tape(a, b);
  Tensor out = elementwise(op, a.value(), b.value());
  return t.record(std::move(out), {a, b}, [&t, a, b, op](Tensor const &g) {
    Tensor const &va = a.value();
    Tensor const &vb = b.value();
    switch (op)
    {
    case BinaryOp::add:
      t.accumulate(a, sum_to_shape(g, va.dims()));
      t.accumulate(b, sum_to_shape(g, vb.dims()));
      break;
    case BinaryOp::sub:
      t.accumulate(a, sum_to_shape(g, va.dims()));
      if (t.requires_grad(b))
      {
        t.accumulate(b, sum_to_shape(map(g, [](double x) { return -x; }), vb.dims()));
      }
      break;
    case BinaryOp::mul:
      if (t.requires_grad(a))
      {
        t.accumulate(a, sum_to_shape(elementwise(BinaryOp::mul, g, vb), va.dims()));
      }
      if (t.requires_grad(b))
      {
        t.accumulate(b, sum_to_shape(elementwise(BinaryOp::mul, g, va), vb.dims()));
      }
      break;
    case BinaryOp::div:
      if (t.requires_grad(a))
      {
        t.accumulate(a, sum_to_shape(elementwise(BinaryOp::div, g, vb, false), va.dims()));
      }
      if (t.requires_grad(b))
      {
        // d(a/b)/db = -a / b^2
        Tensor const q  = elementwise(BinaryOp::div, va, vb, false);
        Tensor const qb = elementwise(BinaryOp::div, q, vb, false);
        t.accumulate(b, sum_to_shape(map(elementwise(BinaryOp::mul, g, qb), [](double x) { return -x; }),
                                     vb.dims()));
      }
      break;
    }
  });
}

inline Var add(Var a, Var b)
{
  return binary(BinaryOp::add, a, b);
}
inline Var sub(Var a, Var b)
{
  return binary(BinaryOp::sub, a, b);
}
inline Var mul(Var a, Var b)
{
  return binary(BinaryOp::mul, a, b);
}
inline Var div(Var a, Var b)
{
  return binary(BinaryOp::div, a, b);
}

inline Var scale(Var a, double c)
{
  return detail::unary(a, map(a.value(), [c](double x) { return c * x; }),
                       [c](Tensor const &g) { return map(g, [c](double x) { return c * x; }); });
}

inline Var add_scalar(Var a, double c)
{
  return detail::unary(a, map(a.value(), [c](double x) { return x + c; }),
                       [](Tensor const &g) { return g; });
}

inline Var neg(Var a)
{
  return scale(a, -1.0);
}

inline Var square(Var a)
{
  return detail::unary(a, map(a.value(), [](double x) { return x * x; }), [a](Tensor const &g) {
    return elementwise(BinaryOp::mul, g, map(a.value(), [](double x) { return 2.0 * x; }));
  });
}

/// Square root. The gradient at an exact zero is taken as zero.
inline Var sqrt(Var a)
{
  Tensor out = map(a.value(), [](double x) {
    if (x < 0.0)
    {
      throw DomainError("sqrt of negative value");
    }
    return std::sqrt(x);
  });
  Tensor const y = out;
  return detail::unary(a, std::move(out), [y](Tensor const &g) {
    Tensor r = g;
    auto   d = r.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i)
    {
      d[i] = y[i] > 0.0 ? d[i] / (2.0 * y[i]) : 0.0;
    }
    return r;
  });
}

inline Var relu(Var a)
{
  return detail::unary(a, map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }),
                       [a](Tensor const &g) {
                         Tensor r  = g;
                         auto   d  = r.mutable_data();
                         auto   va = a.value().data();
                         for (std::size_t i = 0; i < d.size(); ++i)
                         {
                           d[i] = va[i] > 0.0 ? d[i] : 0.0;
                         }
                         return r;
                       });
}

inline Var leaky_relu(Var a, double slope)
{
  return detail::unary(a, map(a.value(), [slope](double x) { return x > 0.0 ? x : slope * x; }),
                       [a, slope](Tensor const &g) {
                         Tensor r  = g;
                         auto   d  = r.mutable_data();
                         auto   va = a.value().data();
                         for (std::size_t i = 0; i < d.size(); ++i)
                         {
                           d[i] = va[i] > 0.0 ? d[i] : slope * d[i];
                         }
                         return r;
                       });
}

/// x / (1 + |x|), strictly inside (-1, 1).
inline Var softsign(Var a)
{
  return detail::unary(a, map(a.value(), [](double x) { return x / (1.0 + std::abs(x)); }),
                       [a](Tensor const &g) {
                         Tensor r  = g;
                         auto   d  = r.mutable_data();
                         auto   va = a.value().data();
                         for (std::size_t i = 0; i < d.size(); ++i)
                         {
                           double const s = 1.0 + std::abs(va[i]);
                           d[i] /= s * s;
                         }
                         return r;
                       });
}

inline Var clamp_min(Var a, double lo)
{
  return detail::unary(a, map(a.value(), [lo](double x) { return std::max(x, lo); }),
                       [a, lo](Tensor const &g) {
                         Tensor r  = g;
                         auto   d  = r.mutable_data();
                         auto   va = a.value().data();
                         for (std::size_t i = 0; i < d.size(); ++i)
                         {
                           d[i] = va[i] >= lo ? d[i] : 0.0;
                         }
                         return r;
                       });
}

inline Var reshape(Var a, Shape dims)
{
  Shape const in_dims = a.dims();
  return detail::unary(a, a.value().reshaped(std::move(dims)),
                       [in_dims](Tensor const &g) { return g.reshaped(in_dims); });
}

/// Copy as a constant; no gradient flows back through the result.
inline Var detach(Var a)
{
  return a.tape->constant(a.value());
}

inline Var sum(Var a)
{
  Shape const dims = a.dims();
  return detail::unary(a, Tensor::scalar(sum_all(a.value())),
                       [dims](Tensor const &g) { return Tensor(dims, g[0]); });
}

inline Var mean(Var a)
{
  Shape const  dims = a.dims();
  double const n    = static_cast<double>(a.value().size());
  return detail::unary(a, Tensor::scalar(sum_all(a.value()) / n),
                       [dims, n](Tensor const &g) { return Tensor(dims, g[0] / n); });
}

/// Sum over `axes`, keeping reduced extents as 1.
inline Var sum_axes(Var a, std::vector<std::size_t> axes)
{
  Shape const dims = a.dims();
  return detail::unary(a, reduce(a.value(), std::move(axes), ReduceKind::sum, true),
                       [dims](Tensor const &g) { return detail::broadcast_to(g, dims); });
}

inline Var mean_axes(Var a, std::vector<std::size_t> axes)
{
  double span = 1.0;
  for (auto ax : axes)
  {
    span *= static_cast<double>(a.dims().at(ax));
  }
  return scale(sum_axes(a, std::move(axes)), 1.0 / span);
}

inline Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false)
{
  Tape &t = detail::same_tape(a, b);
  return t.record(attnorm::matmul(a.value(), b.value(), trans_a, trans_b), {a, b},
                  [&t, a, b, trans_a, trans_b](Tensor const &g) {
                    Tensor const &va = a.value();
                    Tensor const &vb = b.value();
                    if (t.requires_grad(a))
                    {
                      t.accumulate(a, trans_a ? attnorm::matmul(vb, g, trans_b, true)
                                              : attnorm::matmul(g, vb, false, !trans_b));
                    }
                    if (t.requires_grad(b))
                    {
                      t.accumulate(b, trans_b ? attnorm::matmul(g, va, true, trans_a)
                                              : attnorm::matmul(va, g, !trans_a, false));
                    }
                  });
}

inline Var bmm(Var a, Var b, bool trans_a = false, bool trans_b = false)
{
  Tape &t = detail::same_tape(a, b);
  return t.record(attnorm::bmm(a.value(), b.value(), trans_a, trans_b), {a, b},
                  [&t, a, b, trans_a, trans_b](Tensor const &g) {
                    Tensor const &va = a.value();
                    Tensor const &vb = b.value();
                    if (t.requires_grad(a))
                    {
                      Tensor ga = trans_a ? attnorm::bmm(vb, g, trans_b, true)
                                          : attnorm::bmm(g, vb, false, !trans_b);
                      t.accumulate(a, sum_to_shape(ga, va.dims()));
                    }
                    if (t.requires_grad(b))
                    {
                      Tensor gb = trans_b ? attnorm::bmm(g, va, true, trans_a)
                                          : attnorm::bmm(va, g, !trans_a, false);
                      t.accumulate(b, sum_to_shape(gb, vb.dims()));
                    }
                  });
}

/// Softmax of scale * x over the last axis. Backward: s * y * (g - <g, y>).
inline Var softmax_last(Var a, double scale)
{
  Tensor       y   = softmax_channels(a.value(), scale);
  Tensor const out = y;
  return detail::unary(a, std::move(y), [out, scale](Tensor const &g) {
    std::size_t const n = out.dims().back();
    Tensor            r = g;
    auto              d = r.mutable_data();
    for (std::size_t base = 0; base < d.size(); base += n)
    {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k)
      {
        dot += g[base + k] * out[base + k];
      }
      for (std::size_t k = 0; k < n; ++k)
      {
        d[base + k] = scale * out[base + k] * (g[base + k] - dot);
      }
    }
    return r;
  });
}

inline Var max_pool_2x2(Var a)
{
  auto        pooled = max_pool_2x2_with_indices(a.value());
  Shape const dims   = a.dims();
  return detail::unary(a, std::move(pooled.values), [dims, arg = std::move(pooled.argmax)](Tensor const &g) {
    Tensor r(dims);
    for (std::size_t o = 0; o < arg.size(); ++o)
    {
      r[arg[o]] += g[o];
    }
    return r;
  });
}

/// Gather rows: a is [N, P, C]; rows[s] lists the positions taken for sample s.
inline Var gather_rows(Var a, std::vector<std::vector<std::size_t>> const &rows)
{
  Tensor const &v = a.value();
  if (v.rank() != 3 || rows.size() != v.dim(0))
  {
    throw ShapeError("gather_rows expects [N,P,C] with one index list per sample");
  }
  std::size_t const N = v.dim(0), P = v.dim(1), C = v.dim(2);
  std::size_t const k = rows.empty() ? 0 : rows[0].size();
  std::vector<double> out(N * k * C);
  for (std::size_t s = 0; s < N; ++s)
  {
    if (rows[s].size() != k)
    {
      throw ShapeError("gather_rows index lists must have equal length");
    }
    for (std::size_t i = 0; i < k; ++i)
    {
      if (rows[s][i] >= P)
      {
        throw ShapeError("gather_rows index out of range");
      }
      std::copy_n(v.data().begin() + (s * P + rows[s][i]) * C, C, out.begin() + (s * k + i) * C);
    }
  }
  Shape const dims = v.dims();
  return detail::unary(a, Tensor::unchecked({N, k, C}, std::move(out)), [dims, rows, k](Tensor const &g) {
    std::size_t const P = dims[1], C = dims[2];
    Tensor            r(dims);
    for (std::size_t s = 0; s < rows.size(); ++s)
    {
      for (std::size_t i = 0; i < k; ++i)
      {
        for (std::size_t c = 0; c < C; ++c)
        {
          r[(s * P + rows[s][i]) * C + c] += g[(s * k + i) * C + c];
        }
      }
    }
    return r;
  });
}

/// Row lookup into a [K, D] table, e.g. class embeddings.
inline Var embedding(Var table, std::vector<std::size_t> const &ids)
{
  Tensor const &v = table.value();
  if (v.rank() != 2)
  {
    throw ShapeError("embedding table must be a matrix");
  }
  std::size_t const D = v.dim(1);
  std::vector<double> out(ids.size() * D);
  for (std::size_t i = 0; i < ids.size(); ++i)
  {
    if (ids[i] >= v.dim(0))
    {
      throw ShapeError("embedding id out of range");
    }
    std::copy_n(v.data().begin() + ids[i] * D, D, out.begin() + i * D);
  }
  Shape const dims = v.dims();
  return detail::unary(table, Tensor::unchecked({ids.size(), D}, std::move(out)),
                       [dims, ids, D](Tensor const &g) {
                         Tensor r(dims);
                         for (std::size_t i = 0; i < ids.size(); ++i)
                         {
                           for (std::size_t d = 0; d < D; ++d)
                           {
                             r[ids[i] * D + d] += g[i * D + d];
                           }
                         }
                         return r;
                       });
}

/// Concatenate two matrices along columns.
inline Var concat_cols(Var a, Var b)
{
  Tape         &t  = detail::same_tape(a, b);
  Tensor const &va = a.value();
  Tensor const &vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(0) != vb.dim(0))
  {
    throw ShapeError("concat_cols expects matrices with equal row counts");
  }
  std::size_t const R = va.dim(0), A = va.dim(1), B = vb.dim(1);
  std::vector<double> out(R * (A + B));
  for (std::size_t r = 0; r < R; ++r)
  {
    std::copy_n(va.data().begin() + r * A, A, out.begin() + r * (A + B));
    std::copy_n(vb.data().begin() + r * B, B, out.begin() + r * (A + B) + A);
  }
  return t.record(Tensor::unchecked({R, A + B}, std::move(out)), {a, b}, [&t, a, b, R, A, B](Tensor const &g) {
    std::vector<double> ga(R * A), gb(R * B);
    for (std::size_t r = 0; r < R; ++r)
    {
      std::copy_n(g.data().begin() + r * (A + B), A, ga.begin() + r * A);
      std::copy_n(g.data().begin() + r * (A + B) + A, B, gb.begin() + r * B);
    }
    t.accumulate(a, Tensor::unchecked({R, A}, std::move(ga)));
    t.accumulate(b, Tensor::unchecked({R, B}, std::move(gb)));
  });
}

/// Nearest-neighbour 2x upsampling over NHWC.
inline Var upsample_nearest_2x(Var a)
{
  Tensor const &v = a.value();
  if (v.rank() != 4)
  {
    throw ShapeError("upsample expects NHWC");
  }
  std::size_t const N = v.dim(0), H = v.dim(1), W = v.dim(2), C = v.dim(3);
  std::vector<double> out(N * 4 * H * W * C);
  for (std::size_t n = 0; n < N; ++n)
  {
    for (std::size_t i = 0; i < 2 * H; ++i)
    {
      for (std::size_t j = 0; j < 2 * W; ++j)
      {
        std::copy_n(v.data().begin() + ((n * H + i / 2) * W + j / 2) * C, C,
                    out.begin() + ((n * 2 * H + i) * 2 * W + j) * C);
      }
    }
  }
  Shape const dims = v.dims();
  return detail::unary(a, Tensor::unchecked({N, 2 * H, 2 * W, C}, std::move(out)), [dims](Tensor const &g) {
    std::size_t const N = dims[0], H = dims[1], W = dims[2], C = dims[3];
    Tensor            r(dims);
    for (std::size_t n = 0; n < N; ++n)
    {
      for (std::size_t i = 0; i < 2 * H; ++i)
      {
        for (std::size_t j = 0; j < 2 * W; ++j)
        {
          for (std::size_t c = 0; c < C; ++c)
          {
            r[((n * H + i / 2) * W + j / 2) * C + c] += g[((n * 2 * H + i) * 2 * W + j) * C + c];
          }
        }
      }
    }
    return r;
  });
}

namespace detail {

struct ConvGeometry
{
  std::size_t N, H, W, Cin, k, stride, pad, Ho, Wo;
};

inline ConvGeometry conv_geometry(Shape const &x, std::size_t k, std::size_t stride)
{
  ConvGeometry c{x[0], x[1], x[2], x[3], k, stride, k / 2, 0, 0};
  c.Ho = (c.H + 2 * c.pad - k) / stride + 1;
  c.Wo = (c.W + 2 * c.pad - k) / stride + 1;
  return c;
}

/// [N*Ho*Wo, k*k*Cin] patch matrix, zero padded.
inline std::vector<double> im2col(Tensor const &x, ConvGeometry const &c)
{
  std::size_t const   cols = c.k * c.k * c.Cin;
  std::vector<double> out(c.N * c.Ho * c.Wo * cols, 0.0);
  auto const          src = x.data();
  for (std::size_t n = 0; n < c.N; ++n)
  {
    for (std::size_t i = 0; i < c.Ho; ++i)
    {
      for (std::size_t j = 0; j < c.Wo; ++j)
      {
        double *row = out.data() + ((n * c.Ho + i) * c.Wo + j) * cols;
        for (std::size_t di = 0; di < c.k; ++di)
        {
          auto const r = static_cast<std::ptrdiff_t>(i * c.stride + di) - static_cast<std::ptrdiff_t>(c.pad);
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(c.H))
          {
            continue;
          }
          for (std::size_t dj = 0; dj < c.k; ++dj)
          {
            auto const q = static_cast<std::ptrdiff_t>(j * c.stride + dj) - static_cast<std::ptrdiff_t>(c.pad);
            if (q < 0 || q >= static_cast<std::ptrdiff_t>(c.W))
            {
              continue;
            }
            std::copy_n(src.begin() + ((n * c.H + static_cast<std::size_t>(r)) * c.W + static_cast<std::size_t>(q)) * c.Cin,
                        c.Cin, row + (di * c.k + dj) * c.Cin);
          }
        }
      }
    }
  }
  return out;
}

inline void col2im(std::vector<double> const &cols_grad, ConvGeometry const &c, Tensor &dx)
{
  std::size_t const cols = c.k * c.k * c.Cin;
  auto              dst  = dx.mutable_data();
  for (std::size_t n = 0; n < c.N; ++n)
  {
    for (std::size_t i = 0; i < c.Ho; ++i)
    {
      for (std::size_t j = 0; j < c.Wo; ++j)
      {
        double const *row = cols_grad.data() + ((n * c.Ho + i) * c.Wo + j) * cols;
        for (std::size_t di = 0; di < c.k; ++di)
        {
          auto const r = static_cast<std::ptrdiff_t>(i * c.stride + di) - static_cast<std::ptrdiff_t>(c.pad);
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(c.H))
          {
            continue;
          }
          for (std::size_t dj = 0; dj < c.k; ++dj)
          {
            auto const q = static_cast<std::ptrdiff_t>(j * c.stride + dj) - static_cast<std::ptrdiff_t>(c.pad);
            if (q < 0 || q >= static_cast<std::ptrdiff_t>(c.W))
            {
              continue;
            }
            double       *px = dst.data() + ((n * c.H + static_cast<std::size_t>(r)) * c.W + static_cast<std::size_t>(q)) * c.Cin;
            double const *pg = row + (di * c.k + dj) * c.Cin;
            for (std::size_t ch = 0; ch < c.Cin; ++ch)
            {
              px[ch] += pg[ch];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/**
 * Square convolution over NHWC with "same" zero padding (k / 2) and the
 * given stride. Weights are [k*k*Cin, Cout] in (row, col, in-channel) order.
 */
inline Var conv2d(Var x, Var w, std::size_t k, std::size_t stride = 1)
{
  Tape         &t  = detail::same_tape(x, w);
  Tensor const &vx = x.value();
  Tensor const &vw = w.value();
  if (vx.rank() != 4 || vw.rank() != 2 || vw.dim(0) != k * k * vx.dim(3) || k % 2 == 0 || stride == 0)
  {
    throw ShapeError("conv2d: input " + shape_str(vx.dims()) + " incompatible with weights " +
                     shape_str(vw.dims()));
  }
  auto const        geo  = detail::conv_geometry(vx.dims(), k, stride);
  std::size_t const rows = geo.N * geo.Ho * geo.Wo;
  std::size_t const cols = k * k * geo.Cin;
  std::size_t const Cout = vw.dim(1);
  auto              patches = std::make_shared<std::vector<double>>(detail::im2col(vx, geo));
  std::vector<double> out(rows * Cout, 0.0);
  attnorm::detail::gemm_accumulate(patches->data(), vw.data().data(), out.data(), rows, cols, Cout);
  return t.record(Tensor::unchecked({geo.N, geo.Ho, geo.Wo, Cout}, std::move(out)), {x, w},
                  [&t, x, w, geo, rows, cols, Cout, patches](Tensor const &g) {
                    Tensor const g2 = g.reshaped({rows, Cout});
                    if (t.requires_grad(w))
                    {
                      std::vector<double> dw(cols * Cout, 0.0);
                      attnorm::detail::gemm_tn_accumulate(patches->data(), g2.data().data(), dw.data(),
                                                          rows, cols, Cout);
                      t.accumulate(w, Tensor::unchecked({cols, Cout}, std::move(dw)));
                    }
                    if (t.requires_grad(x))
                    {
                      Tensor const dcols = attnorm::matmul(g2, w.value(), false, true);
                      Tensor       dx(x.dims());
                      detail::col2im(dcols.values(), geo, dx);
                      t.accumulate(x, dx);
                    }
                  });
}

}  // namespace ag

}  // namespace attnorm
