#pragma once

#include <stdexcept>
#include <string>

namespace ccl {

/// Bad input: violated invariant, malformed config, shape mismatch.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file content. The message names the file line.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Training produced a non-finite loss or activation.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long step = -1)
      : std::runtime_error(what), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace ccl
