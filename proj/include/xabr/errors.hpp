#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xabr {

// Shapes that do not line up (matmul inner dims, widths, concat).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Token id outside of a table.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Sequence longer than a stack's max_len.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Caller broke a precondition (non-scalar loss, all labels ignored, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed corpus line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed JSON that lacks a required field.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Checkpoint that cannot be decoded; offset is the byte position of the fault.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace xabr
