#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pexcite {

struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ArchitectureError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SeparabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, std::size_t iter)
      : std::runtime_error(what + " (iteration " + std::to_string(iter) + ")"), iteration(iter) {}
  std::size_t iteration;
};

struct FormatError : std::runtime_error {
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), byte_offset(offset) {}
  std::size_t byte_offset;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line_no)
      : std::runtime_error(what + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
  std::size_t line;
};

}  // namespace pexcite
