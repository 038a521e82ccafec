#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdrest {

using idx = std::int64_t;

namespace detail {
inline void str_cat(std::ostringstream&) {}
template <typename A, typename... Rest>
void str_cat(std::ostringstream& os, const A& a, Rest&&... rest) {
  os << a;
  str_cat(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream os;
  detail::str_cat(os, std::forward<Args>(args)...);
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

#define CR_CHECK(cond, ...) \
  do {                      \
    if (!(cond)) ::cdrest::fail(::cdrest::str(__VA_ARGS__)); \
  } while (0)

inline idx numel_of(const std::vector<idx>& shape) {
  idx n = 1;
  for (idx d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<idx>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace cdrest
