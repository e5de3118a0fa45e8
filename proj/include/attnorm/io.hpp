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

// ANT1 tensor container:
//   "ANT1" | u8 dtype (0 = f64, 1 = f32) | u8 rank | rank x u64 extents |
//   row-major values
// All integers and values are little-endian.

#include "attnorm/autograd.hpp"
#include "attnorm/tensor.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

namespace attnorm::io {

class IoError : public std::runtime_error
{
public:
  enum class Kind
  {
    open,
    write,
    magic,
    dtype,
    truncated,
    extent_overflow,
    format,
  };

  IoError(Kind kind, std::string const &what)
    : std::runtime_error(what)
    , kind_(kind)
  {}

  Kind kind() const noexcept
  {
    return kind_;
  }

private:
  Kind kind_;
};

enum class DType : std::uint8_t
{
  f64 = 0,
  f32 = 1,
};

using AnyTensor = std::variant<Tensor, TensorF>;

namespace detail {

inline void put_u64(std::string &out, std::uint64_t v)
{
  for (int i = 0; i < 8; ++i)
  {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
  }
}

inline void put_u32(std::string &out, std::uint32_t v)
{
  for (int i = 0; i < 4; ++i)
  {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
  }
}

class Reader
{
public:
  explicit Reader(std::string_view bytes)
    : bytes_(bytes)
  {}

  std::string_view take(std::size_t count)
  {
    if (bytes_.size() - pos_ < count)
    {
      throw IoError(IoError::Kind::truncated, "tensor payload is truncated");
    }
    auto v = bytes_.substr(pos_, count);
    pos_ += count;
    return v;
  }

  std::uint8_t u8()
  {
    return static_cast<std::uint8_t>(take(1)[0]);
  }

  std::uint64_t u64()
  {
    auto          b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
    {
      v = (v << 8U) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
    }
    return v;
  }

  std::uint32_t u32()
  {
    auto          b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
    {
      v = (v << 8U) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
    }
    return v;
  }

  std::size_t position() const noexcept
  {
    return pos_;
  }
  std::size_t remaining() const noexcept
  {
    return bytes_.size() - pos_;
  }

private:
  std::string_view bytes_;
  std::size_t      pos_ = 0;
};

template <typename T>
void encode(std::string &out, BasicTensor<T> const &t)
{
  out += "ANT1";
  out.push_back(static_cast<char>(std::is_same_v<T, double> ? DType::f64 : DType::f32));
  if (t.rank() > 255)
  {
    throw IoError(IoError::Kind::format, "tensor rank exceeds 255");
  }
  out.push_back(static_cast<char>(t.rank()));
  for (auto d : t.dims())
  {
    put_u64(out, d);
  }
  for (T v : t.data())
  {
    if constexpr (std::is_same_v<T, double>)
    {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    else
    {
      put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
  }
}

inline AnyTensor decode(Reader &in)
{
  auto magic = in.take(4);
  if (magic != "ANT1")
  {
    throw IoError(IoError::Kind::magic, "bad tensor magic");
  }
  auto const code = in.u8();
  if (code > 1)
  {
    throw IoError(IoError::Kind::dtype, "unknown dtype code " + std::to_string(code));
  }
  auto const  rank = in.u8();
  Shape       dims(rank);
  std::size_t count = 1;
  std::size_t const width = code == 0 ? 8 : 4;
  for (auto &d : dims)
  {
    std::uint64_t const e = in.u64();
    if (e == 0 || e > std::numeric_limits<std::size_t>::max() / count ||
        e * count > std::numeric_limits<std::size_t>::max() / width)
    {
      throw IoError(IoError::Kind::extent_overflow, "tensor extents overflow");
    }
    d = static_cast<std::size_t>(e);
    count *= d;
  }
  if (rank == 0)
  {
    throw IoError(IoError::Kind::format, "tensor rank must be positive");
  }
  if (count * width > in.remaining())
  {
    throw IoError(IoError::Kind::truncated, "tensor payload is truncated");
  }
  if (code == 0)
  {
    std::vector<double> v(count);
    for (auto &e : v)
    {
      e = std::bit_cast<double>(in.u64());
    }
    return Tensor::unchecked(std::move(dims), std::move(v));
  }
  std::vector<float> v(count);
  for (auto &e : v)
  {
    e = std::bit_cast<float>(in.u32());
  }
  return TensorF::unchecked(std::move(dims), std::move(v));
}

}  // namespace detail

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v)
{
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// Write `bytes` to `path.tmp` then rename over `path`.
inline void atomic_write(std::filesystem::path const &path, std::string_view bytes)
{
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
    {
      throw IoError(IoError::Kind::open, "cannot open " + tmp.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
    {
      throw IoError(IoError::Kind::write, "failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
  {
    throw IoError(IoError::Kind::write, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw IoError(IoError::Kind::open, "cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
std::string encode_tensor(BasicTensor<T> const &t)
{
  std::string out;
  detail::encode(out, t);
  return out;
}

inline AnyTensor decode_tensor(std::string_view bytes)
{
  detail::Reader in(bytes);
  return detail::decode(in);
}

template <typename T>
void tensor_write(std::filesystem::path const &path, BasicTensor<T> const &t)
{
  atomic_write(path, encode_tensor(t));
}

inline AnyTensor tensor_read(std::filesystem::path const &path)
{
  return decode_tensor(read_file(path));
}

/// Read a tensor whose dtype must be T; a different payload dtype is an error.
template <typename T>
BasicTensor<T> tensor_read_as(std::filesystem::path const &path)
{
  auto any = tensor_read(path);
  if (auto *t = std::get_if<BasicTensor<T>>(&any))
  {
    return std::move(*t);
  }
  throw IoError(IoError::Kind::dtype, path.string() + " holds a different dtype");
}

/// Binary PGM (P5), maxval 255; values clamp to [0, 1], byte = floor(v * 255 + 0.5).
inline std::string encode_pgm(Tensor const &image)
{
  if (image.rank() != 2)
  {
    throw ShapeError("pgm image must be [H, W], got " + shape_str(image.dims()));
  }
  std::string out = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  for (double v : image.data())
  {
    double const c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5))));
  }
  return out;
}

inline void pgm_write(std::filesystem::path const &path, Tensor const &image)
{
  atomic_write(path, encode_pgm(image));
}

/**
 * Checkpoint: `<stem>.ant` holds one ANT1 record per parameter back to
 * back, `<stem>.manifest` lists "name offset" per line.
 */
inline void save_checkpoint(std::filesystem::path const &stem, std::vector<Param const *> const &params)
{
  std::string blob;
  std::string manifest;
  for (auto const *p : params)
  {
    manifest += p->name + " " + std::to_string(blob.size()) + "\n";
    detail::encode(blob, p->value);
  }
  std::filesystem::path data = stem;
  data += ".ant";
  std::filesystem::path index = stem;
  index += ".manifest";
  atomic_write(data, blob);
  atomic_write(index, manifest);
}

inline std::map<std::string, Tensor> load_checkpoint(std::filesystem::path const &stem)
{
  std::filesystem::path data = stem;
  data += ".ant";
  std::filesystem::path index = stem;
  index += ".manifest";
  std::string const  blob = read_file(data);
  std::istringstream manifest(read_file(index));
  std::map<std::string, Tensor> out;
  std::string                   name;
  std::size_t                   offset = 0;
  while (manifest >> name >> offset)
  {
    if (offset >= blob.size())
    {
      throw IoError(IoError::Kind::format, "manifest offset past end of checkpoint for " + name);
    }
    detail::Reader in(std::string_view(blob).substr(offset));
    auto           any = detail::decode(in);
    if (auto *t = std::get_if<Tensor>(&any))
    {
      out.emplace(name, std::move(*t));
    }
    else
    {
      throw IoError(IoError::Kind::dtype, "checkpoint entry " + name + " is not f64");
    }
  }
  return out;
}

/// Copy matching entries into params; every param must be present with equal dims.
inline void restore_params(std::map<std::string, Tensor> const &saved, std::vector<Param *> const &params)
{
  for (auto *p : params)
  {
    auto it = saved.find(p->name);
    if (it == saved.end())
    {
      throw IoError(IoError::Kind::format, "checkpoint lacks " + p->name);
    }
    if (it->second.dims() != p->value.dims())
    {
      throw IoError(IoError::Kind::format, "checkpoint dims differ for " + p->name);
    }
    p->value = it->second;
    p->zero_grad();
  }
}

}  // namespace attnorm::io
