#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace atlab {

/// Base class for everything this library throws.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Shape/broadcast/label mismatches.
class shape_error : public error {
public:
  using error::error;
};

/// NaN/Inf surfaced by a forward or backward computation.
class numeric_error : public error {
public:
  using error::error;
};

/// Invalid configuration rejected before running anything.
class config_error : public error {
public:
  using error::error;
};

/// File format or filesystem failures.
class io_error : public error {
public:
  using error::error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace atlab
