#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "ctxlstm/common.hpp"

namespace ctxlstm::binary {

// Little-endian scalar I/O. Reads throw Format("truncated ...") on short input.

template <class T>
  requires std::is_arithmetic_v<T>
void write(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
  requires std::is_arithmetic_v<T>
T read(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    fail(ErrorKind::Format, std::string("truncated file while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what, std::uint32_t max_len = 1u << 24) {
  const auto n = read<std::uint32_t>(in, what);
  if (n > max_len) fail(ErrorKind::Format, std::string("implausible length for ") + what);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) fail(ErrorKind::Format, std::string("truncated file while reading ") + what);
  return s;
}

}  // namespace ctxlstm::binary
