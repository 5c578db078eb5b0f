#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cno {

enum class ErrorKind {
  parameter,
  shape,
  config,
  format,
  numeric,
  io,
  usage,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

}  // namespace cno
