#pragma once

#include <stdexcept>
#include <string>

namespace densemarks {

enum class ErrorKind {
  argument,      // bad parameters / usage
  range,         // value outside the documented domain
  input_format,  // malformed input file
  numerical,     // solver failure, divergence, non-finite values
  degenerate,    // rank-deficient / at-infinity geometry
  io,            // filesystem failure
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

// Process exit codes used by the CLI. 0 = success.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument:
    case ErrorKind::range:
      return 2;
    case ErrorKind::input_format:
    case ErrorKind::io:
      return 3;
    case ErrorKind::numerical:
    case ErrorKind::degenerate:
      return 4;
  }
  return 1;
}

}  // namespace densemarks
