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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace attnorm {

class ShapeError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error
{
public:
  using std::domain_error::domain_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(Shape const &dims)
{
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(Shape const &dims)
{
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i)
  {
    os << (i ? "," : "") << dims[i];
  }
  os << ']';
  return os.str();
}

/**
 * Dense row-major tensor. Feature maps use NHWC so that the channel vector
 * of a pixel is contiguous.
 *
 * The checked constructors reject non-finite values; `unchecked` skips the
 * scan and is meant for the single-precision benchmark path.
 */
template <typename T>
class BasicTensor
{
public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape dims, T fill = T{0})
    : dims_(std::move(dims))
  {
    validate_dims();
    if (!std::isfinite(fill))
    {
      throw DomainError("tensor fill value is not finite");
    }
    data_.assign(shape_numel(dims_), fill);
  }

  BasicTensor(Shape dims, std::vector<T> data)
    : dims_(std::move(dims))
    , data_(std::move(data))
  {
    validate_dims();
    if (shape_numel(dims_) != data_.size())
    {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + shape_str(dims_));
    }
    for (T v : data_)
    {
      if (!std::isfinite(v))
      {
        throw DomainError("non-finite value in checked tensor construction");
      }
    }
  }

  static BasicTensor unchecked(Shape dims, std::vector<T> data)
  {
    BasicTensor t;
    t.dims_ = std::move(dims);
    t.data_ = std::move(data);
    t.validate_dims();
    if (shape_numel(t.dims_) != t.data_.size())
    {
      throw ShapeError("tensor data length does not match dims " + shape_str(t.dims_));
    }
    return t;
  }

  static BasicTensor scalar(T v)
  {
    return BasicTensor(Shape{1}, std::vector<T>{v});
  }

  Shape const &dims() const noexcept
  {
    return dims_;
  }
  std::size_t rank() const noexcept
  {
    return dims_.size();
  }
  std::size_t dim(std::size_t axis) const
  {
    return dims_.at(axis);
  }
  std::size_t size() const noexcept
  {
    return data_.size();
  }
  bool empty() const noexcept
  {
    return data_.empty();
  }

  std::span<T const> data() const noexcept
  {
    return data_;
  }
  std::span<T> mutable_data() noexcept
  {
    return data_;
  }
  std::vector<T> const &values() const noexcept
  {
    return data_;
  }

  T const &operator[](std::size_t i) const
  {
    return data_[i];
  }
  T &operator[](std::size_t i)
  {
    return data_[i];
  }

  T item() const
  {
    if (data_.size() != 1)
    {
      throw ShapeError("item() on tensor with dims " + shape_str(dims_));
    }
    return data_[0];
  }

  /// Same data, new dims. Element count must match.
  BasicTensor reshaped(Shape dims) const
  {
    if (shape_numel(dims) != data_.size())
    {
      throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
    }
    BasicTensor t = *this;
    t.dims_ = std::move(dims);
    return t;
  }

  bool operator==(BasicTensor const &o) const = default;

private:
  void validate_dims() const
  {
    if (dims_.empty())
    {
      throw ShapeError("tensor rank must be at least 1");
    }
    for (auto d : dims_)
    {
      if (d == 0)
      {
        throw ShapeError("tensor extents must be positive, got " + shape_str(dims_));
      }
    }
  }

  Shape          dims_;
  std::vector<T> data_;
};

using Tensor  = BasicTensor<double>;
using TensorF = BasicTensor<float>;

template <typename T>
BasicTensor<T> zeros_like(BasicTensor<T> const &t)
{
  return BasicTensor<T>(t.dims());
}

template <typename T>
BasicTensor<T> ones_like(BasicTensor<T> const &t)
{
  return BasicTensor<T>(t.dims(), T{1});
}

template <typename T>
bool bit_identical(BasicTensor<T> const &a, BasicTensor<T> const &b)
{
  if (a.dims() != b.dims())
  {
    return false;
  }
  auto da = a.data();
  auto db = b.data();
  return std::equal(da.begin(), da.end(), db.begin(), [](T x, T y) {
    return std::memcmp(&x, &y, sizeof(T)) == 0;
  });
}

template <typename T>
T max_abs_diff(BasicTensor<T> const &a, BasicTensor<T> const &b)
{
  if (a.dims() != b.dims())
  {
    throw ShapeError("max_abs_diff: dims " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  }
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i)
  {
    m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  }
  return m;
}

//------------------------------------------------------------------------------
// Broadcasting
//------------------------------------------------------------------------------

/// Numpy-style: dims are right-aligned, missing leading extents count as 1,
/// and an extent of 1 stretches to match the other operand.
inline Shape broadcast_dims(Shape const &a, Shape const &b)
{
  std::size_t const rank = std::max(a.size(), b.size());
  Shape             out(rank);
  for (std::size_t i = 0; i < rank; ++i)
  {
    std::size_t const da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t const db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
    {
      throw ShapeError("dims " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace detail {

/// Strides of `in` viewed under the broadcast dims `out` (0 on stretched axes).
inline std::vector<std::size_t> broadcast_strides(Shape const &in, Shape const &out)
{
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t              stride = 1;
  std::size_t const        offset = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;)
  {
    strides[i + offset] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

/**
 * Visit every element of the broadcast shape `out` in row-major order,
 * calling fn(out_index, a_index, b_index). The last axis runs as an inner
 * loop to keep the common cases tight.
 */
template <typename Fn>
void broadcast_visit(Shape const &out, std::vector<std::size_t> const &sa,
                     std::vector<std::size_t> const &sb, Fn &&fn)
{
  std::size_t const rank  = out.size();
  std::size_t const inner = out[rank - 1];
  std::size_t const ia    = sa[rank - 1];
  std::size_t const ib    = sb[rank - 1];
  std::size_t const outer = shape_numel(out) / inner;

  std::vector<std::size_t> idx(rank, 0);
  std::size_t              oa = 0;
  std::size_t              ob = 0;
  std::size_t              o  = 0;
  for (std::size_t blk = 0; blk < outer; ++blk)
  {
    for (std::size_t j = 0; j < inner; ++j)
    {
      fn(o + j, oa + j * ia, ob + j * ib);
    }
    o += inner;
    // advance odometer over axes [0, rank-1)
    for (std::size_t ax = rank - 1; ax-- > 0;)
    {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax])
      {
        break;
      }
      oa -= sa[ax] * idx[ax];
      ob -= sb[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

enum class BinaryOp
{
  add,
  sub,
  mul,
  div
};

/**
 * Elementwise combination with broadcasting. In checked mode a division by
 * an exact zero raises DomainError; unchecked mode follows IEEE.
 */
template <typename T>
BasicTensor<T> elementwise(BinaryOp op, BasicTensor<T> const &a, BasicTensor<T> const &b,
                           bool checked = true)
{
  Shape const    out_dims = broadcast_dims(a.dims(), b.dims());
  std::vector<T> out(shape_numel(out_dims));
  auto const     pa = a.data();
  auto const     pb = b.data();

  auto run = [&](auto f) {
    if (a.dims() == b.dims())
    {
      for (std::size_t i = 0; i < out.size(); ++i)
      {
        out[i] = f(pa[i], pb[i]);
      }
      return;
    }
    detail::broadcast_visit(out_dims, detail::broadcast_strides(a.dims(), out_dims),
                            detail::broadcast_strides(b.dims(), out_dims),
                            [&](std::size_t o, std::size_t i, std::size_t j) {
                              out[o] = f(pa[i], pb[j]);
                            });
  };

  switch (op)
  {
  case BinaryOp::add:
    run([](T x, T y) { return x + y; });
    break;
  case BinaryOp::sub:
    run([](T x, T y) { return x - y; });
    break;
  case BinaryOp::mul:
    run([](T x, T y) { return x * y; });
    break;
  case BinaryOp::div:
    if (checked && std::any_of(pb.begin(), pb.end(), [](T v) { return v == T{0}; }))
    {
      throw DomainError("division by exact zero");
    }
    run([](T x, T y) { return x / y; });
    break;
  }
  return BasicTensor<T>::unchecked(out_dims, std::move(out));
}

template <typename T>
BasicTensor<T> add(BasicTensor<T> const &a, BasicTensor<T> const &b)
{
  return elementwise(BinaryOp::add, a, b);
}
template <typename T>
BasicTensor<T> sub(BasicTensor<T> const &a, BasicTensor<T> const &b)
{
  return elementwise(BinaryOp::sub, a, b);
}
template <typename T>
BasicTensor<T> mul(BasicTensor<T> const &a, BasicTensor<T> const &b)
{
  return elementwise(BinaryOp::mul, a, b);
}
template <typename T>
BasicTensor<T> div(BasicTensor<T> const &a, BasicTensor<T> const &b)
{
  return elementwise(BinaryOp::div, a, b);
}

template <typename T, typename Fn>
BasicTensor<T> map(BasicTensor<T> const &a, Fn &&fn)
{
  std::vector<T> out(a.size());
  auto const     pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i)
  {
    out[i] = fn(pa[i]);
  }
  return BasicTensor<T>::unchecked(a.dims(), std::move(out));
}

/// Sum `t` down to `target` dims, undoing a broadcast (used by backward passes).
template <typename T>
BasicTensor<T> sum_to_shape(BasicTensor<T> const &t, Shape const &target)
{
  if (t.dims() == target)
  {
    return t;
  }
  if (broadcast_dims(target, t.dims()) != t.dims())
  {
    throw ShapeError("cannot sum " + shape_str(t.dims()) + " down to " + shape_str(target));
  }
  std::vector<T> out(shape_numel(target), T{0});
  auto const     src  = t.data();
  auto const     zero = std::vector<std::size_t>(t.rank(), 0);
  detail::broadcast_visit(t.dims(), detail::broadcast_strides(target, t.dims()), zero,
                          [&](std::size_t o, std::size_t i, std::size_t) { out[i] += src[o]; });
  return BasicTensor<T>::unchecked(target, std::move(out));
}

//------------------------------------------------------------------------------
// Matrix products
//------------------------------------------------------------------------------

namespace detail {

/// c[m×p] += a[m×k] · b[k×p]; for each output the k-reduction runs in order.
template <typename T>
void gemm_accumulate(T const *__restrict a, T const *__restrict b, T *__restrict c, std::size_t m,
                     std::size_t k, std::size_t p)
{
  // Register tiles of 4 x 8 entries of C. Every entry of C receives its k
  // products one at a time in ascending order, whatever the tiling.
  constexpr std::size_t R = 4;
  constexpr std::size_t W = 8;
  std::size_t const     m_main = m - m % R;
  std::size_t const     p_main = p - p % W;
  for (std::size_t i = 0; i < m_main; i += R)
  {
    for (std::size_t j = 0; j < p_main; j += W)
    {
      T acc[R][W];
      for (std::size_t r = 0; r < R; ++r)
      {
        for (std::size_t q = 0; q < W; ++q)
        {
          acc[r][q] = c[(i + r) * p + j + q];
        }
      }
      for (std::size_t kk = 0; kk < k; ++kk)
      {
        T const *brow = b + kk * p + j;
        for (std::size_t r = 0; r < R; ++r)
        {
          T const av = a[(i + r) * k + kk];
          for (std::size_t q = 0; q < W; ++q)
          {
            acc[r][q] += av * brow[q];
          }
        }
      }
      for (std::size_t r = 0; r < R; ++r)
      {
        for (std::size_t q = 0; q < W; ++q)
        {
          c[(i + r) * p + j + q] = acc[r][q];
        }
      }
    }
  }
  auto plain = [&](std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1) {
    for (std::size_t i = i0; i < i1; ++i)
    {
      for (std::size_t kk = 0; kk < k; ++kk)
      {
        T const aik = a[i * k + kk];
        for (std::size_t j = j0; j < j1; ++j)
        {
          c[i * p + j] += aik * b[kk * p + j];
        }
      }
    }
  };
  plain(0, m_main, p_main, p);
  plain(m_main, m, 0, p);
}

/// c[k, p] += a[m, k]^T b[m, p], summing over m in ascending order.
template <typename T>
void gemm_tn_accumulate(T const *__restrict a, T const *__restrict b, T *__restrict c, std::size_t m,
                        std::size_t k, std::size_t p)
{
  constexpr std::size_t R = 4;
  constexpr std::size_t W = 8;
  std::size_t const     k_main = k - k % R;
  std::size_t const     p_main = p - p % W;
  for (std::size_t i = 0; i < k_main; i += R)
  {
    for (std::size_t j = 0; j < p_main; j += W)
    {
      T acc[R][W];
      for (std::size_t r = 0; r < R; ++r)
      {
        for (std::size_t q = 0; q < W; ++q)
        {
          acc[r][q] = c[(i + r) * p + j + q];
        }
      }
      for (std::size_t row = 0; row < m; ++row)
      {
        T const *arow = a + row * k + i;
        T const *brow = b + row * p + j;
        for (std::size_t r = 0; r < R; ++r)
        {
          T const av = arow[r];
          for (std::size_t q = 0; q < W; ++q)
          {
            acc[r][q] += av * brow[q];
          }
        }
      }
      for (std::size_t r = 0; r < R; ++r)
      {
        for (std::size_t q = 0; q < W; ++q)
        {
          c[(i + r) * p + j + q] = acc[r][q];
        }
      }
    }
  }
  auto plain = [&](std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1) {
    for (std::size_t row = 0; row < m; ++row)
    {
      for (std::size_t i = i0; i < i1; ++i)
      {
        T const av = a[row * k + i];
        for (std::size_t j = j0; j < j1; ++j)
        {
          c[i * p + j] += av * b[row * p + j];
        }
      }
    }
  };
  plain(0, k_main, p_main, p);
  plain(k_main, k, 0, p);
}

template <typename T>
void transpose_into(T const *a, T *out, std::size_t rows, std::size_t cols)
{
  for (std::size_t i = 0; i < rows; ++i)
  {
    for (std::size_t j = 0; j < cols; ++j)
    {
      out[j * rows + i] = a[i * cols + j];
    }
  }
}

}  // namespace detail

template <typename T>
BasicTensor<T> transpose(BasicTensor<T> const &a)
{
  if (a.rank() != 2)
  {
    throw ShapeError("transpose expects a matrix, got " + shape_str(a.dims()));
  }
  std::vector<T> out(a.size());
  detail::transpose_into(a.data().data(), out.data(), a.dim(0), a.dim(1));
  return BasicTensor<T>::unchecked({a.dim(1), a.dim(0)}, std::move(out));
}

/// op(a) · op(b) for matrices, op being an optional transpose.
template <typename T>
BasicTensor<T> matmul(BasicTensor<T> const &a, BasicTensor<T> const &b, bool trans_a = false,
                      bool trans_b = false)
{
  if (a.rank() != 2 || b.rank() != 2)
  {
    throw ShapeError("matmul expects matrices, got " + shape_str(a.dims()) + " and " +
                     shape_str(b.dims()));
  }
  BasicTensor<T> const  lhs_t = trans_a ? transpose(a) : BasicTensor<T>{};
  BasicTensor<T> const  rhs_t = trans_b ? transpose(b) : BasicTensor<T>{};
  BasicTensor<T> const &left  = trans_a ? lhs_t : a;
  BasicTensor<T> const &rhs   = trans_b ? rhs_t : b;
  std::size_t const     m     = left.dim(0);
  std::size_t const k = left.dim(1);
  if (rhs.dim(0) != k)
  {
    throw ShapeError("matmul inner extents differ: " + shape_str(left.dims()) + " x " +
                     shape_str(rhs.dims()));
  }
  std::size_t const p = rhs.dim(1);
  std::vector<T>    out(m * p, T{0});
  detail::gemm_accumulate(left.data().data(), rhs.data().data(), out.data(), m, k, p);
  return BasicTensor<T>::unchecked({m, p}, std::move(out));
}

/// Batched product over rank-3 operands. A batch extent of 1 is shared
/// across the other operand's batch.
template <typename T>
BasicTensor<T> bmm(BasicTensor<T> const &a, BasicTensor<T> const &b, bool trans_a = false,
                   bool trans_b = false)
{
  if (a.rank() != 3 || b.rank() != 3)
  {
    throw ShapeError("bmm expects rank-3 operands, got " + shape_str(a.dims()) + " and " +
                     shape_str(b.dims()));
  }
  std::size_t const ba = a.dim(0);
  std::size_t const bb = b.dim(0);
  if (ba != bb && ba != 1 && bb != 1)
  {
    throw ShapeError("bmm batch extents differ: " + shape_str(a.dims()) + " and " +
                     shape_str(b.dims()));
  }
  std::size_t const batch = std::max(ba, bb);
  std::size_t const m     = trans_a ? a.dim(2) : a.dim(1);
  std::size_t const k     = trans_a ? a.dim(1) : a.dim(2);
  std::size_t const kb    = trans_b ? b.dim(2) : b.dim(1);
  std::size_t const p     = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb)
  {
    throw ShapeError("bmm inner extents differ: " + shape_str(a.dims()) + " x " +
                     shape_str(b.dims()));
  }
  std::size_t const sa = a.dim(1) * a.dim(2);
  std::size_t const sb = b.dim(1) * b.dim(2);
  std::vector<T>    out(batch * m * p, T{0});
  std::vector<T>    ta(trans_a ? m * k : 0);
  std::vector<T>    tb(trans_b ? k * p : 0);
  for (std::size_t n = 0; n < batch; ++n)
  {
    T const *pa = a.data().data() + (ba == 1 ? 0 : n) * sa;
    T const *pb = b.data().data() + (bb == 1 ? 0 : n) * sb;
    if (trans_a)
    {
      detail::transpose_into(pa, ta.data(), k, m);
      pa = ta.data();
    }
    if (trans_b)
    {
      detail::transpose_into(pb, tb.data(), p, k);
      pb = tb.data();
    }
    detail::gemm_accumulate(pa, pb, out.data() + n * m * p, m, k, p);
  }
  return BasicTensor<T>::unchecked({batch, m, p}, std::move(out));
}

//------------------------------------------------------------------------------
// Reductions
//------------------------------------------------------------------------------

enum class ReduceKind
{
  sum,
  mean,
  max
};

/**
 * Reduce over `axes` (distinct, in range). Reduced extents are dropped, or
 * kept as 1 with `keep_dims`. Reducing every axis without keep_dims yields
 * a one-element tensor. Accumulation follows row-major order.
 */
template <typename T>
BasicTensor<T> reduce(BasicTensor<T> const &t, std::vector<std::size_t> axes, ReduceKind kind,
                      bool keep_dims = false)
{
  std::vector<bool> reduced(t.rank(), false);
  for (auto ax : axes)
  {
    if (ax >= t.rank())
    {
      throw ShapeError("reduce axis " + std::to_string(ax) + " out of range for " +
                       shape_str(t.dims()));
    }
    if (reduced[ax])
    {
      throw ShapeError("reduce axes must be distinct");
    }
    reduced[ax] = true;
  }
  if (axes.empty())
  {
    throw DomainError("empty reduction span");
  }
  Shape       kept(t.rank());
  std::size_t span = 1;
  for (std::size_t i = 0; i < t.rank(); ++i)
  {
    kept[i] = reduced[i] ? 1 : t.dim(i);
    span *= reduced[i] ? t.dim(i) : 1;
  }

  T const init = kind == ReduceKind::max ? -std::numeric_limits<T>::infinity() : T{0};
  std::vector<T> out(shape_numel(kept), init);
  auto const     src  = t.data();
  auto const     zero = std::vector<std::size_t>(t.rank(), 0);
  auto const     so   = detail::broadcast_strides(kept, t.dims());
  if (kind == ReduceKind::max)
  {
    detail::broadcast_visit(t.dims(), so, zero, [&](std::size_t o, std::size_t i, std::size_t) {
      out[i] = std::max(out[i], src[o]);
    });
  }
  else
  {
    detail::broadcast_visit(t.dims(), so, zero,
                            [&](std::size_t o, std::size_t i, std::size_t) { out[i] += src[o]; });
    if (kind == ReduceKind::mean)
    {
      for (auto &v : out)
      {
        v /= static_cast<T>(span);
      }
    }
  }

  if (keep_dims)
  {
    return BasicTensor<T>::unchecked(kept, std::move(out));
  }
  Shape dropped;
  for (std::size_t i = 0; i < t.rank(); ++i)
  {
    if (!reduced[i])
    {
      dropped.push_back(t.dim(i));
    }
  }
  if (dropped.empty())
  {
    dropped.push_back(1);
  }
  return BasicTensor<T>::unchecked(dropped, std::move(out));
}

template <typename T>
T sum_all(BasicTensor<T> const &t)
{
  T s{0};
  for (T v : t.data())
  {
    s += v;
  }
  return s;
}

//------------------------------------------------------------------------------
// Softmax and pooling
//------------------------------------------------------------------------------

/// Softmax over the last axis of `scale * x`, max-subtracted per pixel.
template <typename T>
BasicTensor<T> softmax_channels(BasicTensor<T> const &x, T scale)
{
  if (!(scale > T{0}))
  {
    throw DomainError("softmax scale must be positive");
  }
  std::size_t const n = x.dims().back();
  auto const        src = x.data();
  std::vector<T>    out(x.size());
  for (std::size_t base = 0; base < out.size(); base += n)
  {
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < n; ++k)
    {
      T const v = src[base + k];
      if (!std::isfinite(v))
      {
        throw DomainError("softmax input is not finite");
      }
      m = std::max(m, scale * v);
    }
    T denom{0};
    for (std::size_t k = 0; k < n; ++k)
    {
      out[base + k] = std::exp(scale * src[base + k] - m);
      denom += out[base + k];
    }
    for (std::size_t k = 0; k < n; ++k)
    {
      out[base + k] /= denom;
    }
  }
  return BasicTensor<T>::unchecked(x.dims(), std::move(out));
}

template <typename T>
struct PoolResult
{
  BasicTensor<T>           values;
  std::vector<std::size_t> argmax;  // flat input offset per output element
};

/**
 * 2x2 max pooling with stride 2 over NHWC. Odd extents replicate the last
 * row/column. Ties resolve to the first element in row-major window order.
 */
template <typename T>
PoolResult<T> max_pool_2x2_with_indices(BasicTensor<T> const &x)
{
  if (x.rank() != 4)
  {
    throw ShapeError("max_pool_2x2 expects NHWC, got " + shape_str(x.dims()));
  }
  std::size_t const N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  std::size_t const Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  std::vector<T>           out(N * Ho * Wo * C);
  std::vector<std::size_t> arg(out.size());
  auto const               src = x.data();
  for (std::size_t n = 0; n < N; ++n)
  {
    for (std::size_t i = 0; i < Ho; ++i)
    {
      std::size_t const rows[2] = {2 * i, std::min(2 * i + 1, H - 1)};
      for (std::size_t j = 0; j < Wo; ++j)
      {
        std::size_t const cols[2] = {2 * j, std::min(2 * j + 1, W - 1)};
        for (std::size_t c = 0; c < C; ++c)
        {
          std::size_t best = ((n * H + rows[0]) * W + cols[0]) * C + c;
          for (auto r : rows)
          {
            for (auto q : cols)
            {
              std::size_t const off = ((n * H + r) * W + q) * C + c;
              if (src[off] > src[best])
              {
                best = off;
              }
            }
          }
          std::size_t const o = ((n * Ho + i) * Wo + j) * C + c;
          out[o]              = src[best];
          arg[o]              = best;
        }
      }
    }
  }
  return {BasicTensor<T>::unchecked({N, Ho, Wo, C}, std::move(out)), std::move(arg)};
}

template <typename T>
BasicTensor<T> max_pool_2x2(BasicTensor<T> const &x)
{
  return max_pool_2x2_with_indices(x).values;
}

}  // namespace attnorm
