#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <system_error>

#include "saferl/core/errors.hpp"

namespace saferl {

// Shortest decimal form that parses back to the same double. Used by every
// text format in the repo so that round-trips are exact.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError("cannot parse floating-point value: '" + std::string(s) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError("cannot parse integer value: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace saferl
