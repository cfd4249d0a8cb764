#pragma once

#include <stdexcept>
#include <string>

namespace neox {

// Bad input: malformed files, out-of-range ids, inconsistent configs.
// The CLI maps this to exit status 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input parsed but could not be processed (I/O, numerical failure).
// The CLI maps this to exit status 3.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file parse error carrying the offending line number (1-based).
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace neox
