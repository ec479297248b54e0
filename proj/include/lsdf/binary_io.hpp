#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "lsdf/errors.hpp"

// Little-endian scalar I/O shared by the LSDF, TMLP and point-cloud formats.
namespace lsdf::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace detail {

template <typename T>
T byteswap_if_needed(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }
}

}  // namespace detail

inline void write_u32(std::ostream& os, std::uint32_t v) {
  v = detail::byteswap_if_needed(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f32(std::ostream& os, float v) {
  auto bits = detail::byteswap_if_needed(std::bit_cast<std::uint32_t>(v));
  os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline void write_f32s(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) write_f32(os, v);
  }
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_stream(const std::istream& is, const char* what) {
  if (!is) throw FormatError(std::string("truncated stream while reading ") + what);
}

inline std::uint32_t read_u32(std::istream& is, const char* what = "u32") {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  expect_stream(is, what);
  return detail::byteswap_if_needed(v);
}

inline float read_f32(std::istream& is, const char* what = "f32") {
  std::uint32_t bits = 0;
  is.read(reinterpret_cast<char*>(&bits), sizeof bits);
  expect_stream(is, what);
  return std::bit_cast<float>(detail::byteswap_if_needed(bits));
}

inline void read_f32s(std::istream& is, std::span<float> out, const char* what = "f32 array") {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
    expect_stream(is, what);
  } else {
    for (float& v : out) v = read_f32(is, what);
  }
}

inline void read_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) throw FormatError("bad magic, expected \"" + std::string(magic) + "\"");
}

}  // namespace lsdf::io
