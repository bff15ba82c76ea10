#pragma once

// Byte-level helpers shared by the binary file formats (checkpoints, pattern
// sidecars). Everything on disk is little-endian; floating-point values are
// written as their in-memory IEEE bits so round-trips are bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "atlab/common.hpp"

namespace atlab {
namespace detail {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out;
    auto* s = reinterpret_cast<unsigned char*>(&v);
    auto* d = reinterpret_cast<unsigned char*>(&out);
    for (size_t i = 0; i < sizeof(U); ++i) d[i] = s[sizeof(U) - 1 - i];
    return out;
  }
  return v;
}

template <typename U>
void put(std::ostream& os, U v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const char* what) {
  U v;
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw io_error(std::string("truncated file reading ") + what);
  return to_little(v);
}

template <typename T>
void put_values(std::ostream& os, const std::vector<T>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(T)));
  } else {
    for (T x : v) {
      if constexpr (sizeof(T) == 4) {
        uint32_t bits;
        std::memcpy(&bits, &x, 4);
        put(os, bits);
      } else {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        put(os, bits);
      }
    }
  }
}

template <typename T>
std::vector<T> get_values(std::istream& is, size_t n, const char* what) {
  std::vector<T> v(n);
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is) throw io_error(std::string("truncated file reading ") + what);
  } else {
    for (T& x : v) {
      if constexpr (sizeof(T) == 4) {
        uint32_t bits = get<uint32_t>(is, what);
        std::memcpy(&x, &bits, 4);
      } else {
        uint64_t bits = get<uint64_t>(is, what);
        std::memcpy(&x, &bits, 8);
      }
    }
  }
  return v;
}

}  // namespace detail
}  // namespace atlab
