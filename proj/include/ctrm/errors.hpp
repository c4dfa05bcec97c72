#pragma once

#include <stdexcept>
#include <string>

namespace ctrm {

/// Invalid or inconsistent configuration. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// More frames or positions than a fixed-size table holds.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Malformed input file; `line()` is 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed records that disagree with each other (e.g. feature widths).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or was fed inconsistent state.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctrm
