#pragma once

#include <stdexcept>
#include <string>

namespace fedlog {

/// Shape mismatch between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed input row; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed rows that are inconsistent with each other or with the header.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A federated scenario cannot be built from the given graph (e.g. a client
/// with too few labelled nodes).
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Round protocol invoked out of order (e.g. generalisation without a
/// generator bank).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedlog
