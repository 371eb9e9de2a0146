#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace hcat {

// Contract violations (shape mismatches, bad configs, numeric blowups) throw
// Error with a message naming the offender.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
template <class... Args>
void str_append(std::ostringstream& os, Args&&... args) {
  (os << ... << std::forward<Args>(args));
}
}  // namespace detail

template <class... Args>
std::string str(Args&&... args) {
  std::ostringstream os;
  detail::str_append(os, std::forward<Args>(args)...);
  return os.str();
}

template <class... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(str(std::forward<Args>(args)...));
}

template <class... Args>
void check(bool cond, Args&&... args) {
  if (!cond) fail(std::forward<Args>(args)...);
}

}  // namespace hcat
