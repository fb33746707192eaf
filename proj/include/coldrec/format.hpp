#pragma once

#include <charconv>
#include <string>

namespace coldrec {

// Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace coldrec
