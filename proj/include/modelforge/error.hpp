#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace modelforge {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Named/positional axis misuse: unknown names, size conflicts, arity.
class AxisError : public Error {
 public:
  using Error::Error;
};

// Unknown or invalid node kinds, bad field values.
class KindError : public Error {
 public:
  using Error::Error;
};

// A path that does not resolve, or a rewrite that cannot be applied. The
// textual path is kept separately so callers can report it.
class PathError : public Error {
 public:
  PathError(std::string message, std::string path)
      : Error(message + (path.empty() ? "" : " (at " + path + ")")), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class FrozenVariableError : public Error {
 public:
  explicit FrozenVariableError(const std::string& label)
      : Error("variable '" + label + "' is frozen and cannot be written"), label_(label) {}
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

// Failures during a forward pass: missing side inputs, cache overflow, etc.
class ForwardError : public Error {
 public:
  using Error::Error;
};

// Malformed roundtrip documents. Line and column are 1-based; `expected`
// lists what the parser would have accepted at that point.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::size_t column, std::vector<std::string> expected = {})
      : Error(format(message, line, column, expected)), line_(line), column_(column), expected_(std::move(expected)) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  static std::string format(const std::string& message, std::size_t line, std::size_t column,
                            const std::vector<std::string>& expected) {
    std::string out = std::to_string(line) + ":" + std::to_string(column) + ": " + message;
    if (!expected.empty()) {
      out += " (expected ";
      for (std::size_t i = 0; i < expected.size(); ++i) out += (i ? ", " : "") + expected[i];
      out += ")";
    }
    return out;
  }

  std::size_t line_;
  std::size_t column_;
  std::vector<std::string> expected_;
};

}  // namespace modelforge
