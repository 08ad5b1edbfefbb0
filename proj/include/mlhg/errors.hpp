#pragma once

#include <stdexcept>
#include <string>

namespace mlhg {

// Input file could not be read as the expected format (bad JSON, bad number,
// wrong vector width). Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long line = -1)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Input was well-formed but violates a domain invariant (label outside {0,1},
// duplicate note id, empty corpus after preprocessing, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mlhg
