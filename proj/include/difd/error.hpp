#pragma once

#include <stdexcept>
#include <string>

namespace difd {

/// Failure category. The numeric value doubles as the CLI exit code.
enum class ErrorKind : int {
  usage = 1,
  data = 2,
  numeric = 3,
  shape = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace difd
