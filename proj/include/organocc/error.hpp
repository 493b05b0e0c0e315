#pragma once

#include <stdexcept>
#include <string>

namespace organocc {

enum class ErrorKind {
  InvalidArgument,
  DegenerateInput,
  Topology,
  Config,
  LabelConflict,
  FrameMismatch,
  Layout,
  Numeric,
  Io,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind` drives CLI exit codes.
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

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace organocc
