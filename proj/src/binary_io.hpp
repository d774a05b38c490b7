#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>

#include "candlab/error.hpp"

namespace candlab::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& context) {
  static_assert(std::is_trivially_copyable_v<T>);
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError("truncated file", context);
  return value;
}

inline void write_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), 4); }

inline void expect_magic(std::istream& in, std::string_view magic, const std::string& context) {
  std::array<char, 4> got{};
  if (!in.read(got.data(), 4) || std::string_view(got.data(), 4) != magic) {
    throw FormatError("bad magic, expected " + std::string(magic), context);
  }
}

/// Writes `count` values converted to float.
template <typename Scalar>
void write_f32(std::ostream& out, const Scalar* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) write_pod(out, static_cast<float>(data[i]));
}

template <typename Scalar>
void read_f32(std::istream& in, Scalar* data, std::size_t count, const std::string& context) {
  for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<Scalar>(read_pod<float>(in, context));
}

}  // namespace candlab::detail
