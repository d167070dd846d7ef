#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "icon/errors.hpp"

// Little-endian scalar I/O for the on-disk formats.
namespace icon::binio {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IngestionError(std::string("truncated file while reading ") + what);
  return value;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const char* what) {
  const auto len = get<std::uint32_t>(is, what);
  if (len > (1u << 20)) throw IngestionError(std::string("implausible string length in ") + what);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw IngestionError(std::string("truncated file while reading ") + what);
  return s;
}

}  // namespace icon::binio
