#pragma once

#include <stdexcept>
#include <string>

namespace posecert {

enum class ErrorCode {
  InvalidArgument = 1,
  Io,
  Parse,
  Shape,
  Numeric,
  Geometry,
  Infeasible,
  Unsupported,
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace posecert
