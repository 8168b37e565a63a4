#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace explora {

// Numeric values are shared with the C API status codes and the CLI exit codes.
enum class ErrorCode : int {
  invalid_argument = 1,
  io = 2,
  parse = 3,
  not_found = 4,
  divergence = 5,
  state = 6,
  internal = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Snapshot / file parse failure; offset is the byte position of the offending record.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(ErrorCode::parse, "byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace explora
